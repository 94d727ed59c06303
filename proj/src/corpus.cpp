#include "l2grade/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace l2grade::corpus {

namespace {

constexpr std::string_view kEdgePunctuation = ".,;:!?\"'()";

bool is_edge_punct(char c) {
  return kEdgePunctuation.find(c) != std::string_view::npos;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool parse_flag(const std::string& field, bool& out) {
  if (field == "1") {
    out = true;
    return true;
  }
  if (field == "0") {
    out = false;
    return true;
  }
  return false;
}

void check_field(const std::string& field, const std::string& what) {
  if (field.find_first_of("\t\n\r") != std::string::npos) {
    throw ValidationError(what + " contains a tab or newline: " + field);
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

}  // namespace

ClassLabel ClassLabel::from_index(int index) {
  if (index < 0 || index >= kCount) {
    throw ValidationError("class index out of range: " + std::to_string(index));
  }
  return ClassLabel(index < 2, index % 2 == 0);
}

Tokens tokenize(std::string_view text) {
  Tokens tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i;
    std::size_t e = j;
    while (b < e && is_edge_punct(text[b])) ++b;
    while (e > b && is_edge_punct(text[e - 1])) --e;
    if (b < e) {
      std::string token(text.substr(b, e - b));
      for (char& c : token) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 128) c = static_cast<char>(std::tolower(u));
      }
      tokens.push_back(std::move(token));
    }
    i = j;
  }
  return tokens;
}

std::string join(const Tokens& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string prompt_key(std::string_view prompt_text) {
  return join(tokenize(prompt_text));
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  Dataset dataset;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw ParseError(source + ": row " + std::to_string(row) + ": expected 5 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    LabeledExchange ex{fields[0], fields[1], fields[2]};
    if (ex.id.empty()) {
      throw ParseError(source + ": row " + std::to_string(row) + ": empty id");
    }
    if (!parse_flag(fields[3], ex.language_correct) || !parse_flag(fields[4], ex.meaning_correct)) {
      throw ParseError(source + ": row " + std::to_string(row) + ": label fields must be 0 or 1");
    }
    dataset.push_back(std::move(ex));
  }
  check_unique_ids(dataset);
  return dataset;
}

Dataset parse_dataset(const std::string& path) {
  auto in = open_input(path);
  return read_dataset(in, path);
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const auto& ex : dataset) {
    check_field(ex.id, "id");
    check_field(ex.prompt, "prompt");
    check_field(ex.response, "response");
    out << ex.id << '\t' << ex.prompt << '\t' << ex.response << '\t' << (ex.language_correct ? 1 : 0)
        << '\t' << (ex.meaning_correct ? 1 : 0) << '\n';
  }
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  auto out = open_output(path);
  write_dataset(out, dataset);
}

void check_unique_ids(const Dataset& dataset) {
  std::unordered_set<std::string> seen;
  for (const auto& ex : dataset) {
    if (!seen.insert(ex.id).second) throw ValidationError("duplicate exchange id: " + ex.id);
  }
}

// --- Vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words, bool with_boundary)
    : words_(std::move(words)), has_boundary_(with_boundary) {
  if (with_boundary) {
    words_.emplace_back(kStart);
    words_.emplace_back(kEnd);
  }
  words_.emplace_back(kUnknown);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw ValidationError("duplicate vocabulary word: " + words_[i]);
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& corpus, int min_count, bool with_boundary) {
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  std::unordered_map<std::string, long> counts;
  for (const auto& seq : corpus) {
    for (const auto& w : seq) {
      if (w == kUnknown || w == kStart || w == kEnd) continue;
      ++counts[w];
    }
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [w, c] : counts) {
    if (c >= min_count) kept.emplace_back(w, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, c] : kept) words.push_back(w);
  return Vocabulary(std::move(words), with_boundary);
}

bool Vocabulary::contains(std::string_view word) const {
  return word != kUnknown && index_.count(std::string(word)) > 0;
}

std::size_t Vocabulary::index(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? unknown_index() : it->second;
}

std::vector<std::string> Vocabulary::regular_words() const {
  const std::size_t n = words_.size() - 1 - (has_boundary_ ? 2 : 0);
  return {words_.begin(), words_.begin() + static_cast<std::ptrdiff_t>(n)};
}

// --- ReferenceGrammar --------------------------------------------------------

void ReferenceGrammar::add(const std::string& key, Tokens response) {
  entries_[key].push_back(std::move(response));
}

const std::vector<Tokens>& ReferenceGrammar::entries(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ValidationError("no reference-grammar entry for prompt: " + key);
  return it->second;
}

ReferenceGrammar ReferenceGrammar::read(std::istream& in, const std::string& source) {
  ReferenceGrammar grammar;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw ParseError(source + ": row " + std::to_string(row) + ": expected 2 tab-separated fields");
    }
    grammar.add(prompt_key(fields[0]), tokenize(fields[1]));
  }
  return grammar;
}

ReferenceGrammar ReferenceGrammar::parse(const std::string& path) {
  auto in = open_input(path);
  return read(in, path);
}

void ReferenceGrammar::write(std::ostream& out) const {
  for (const auto& [key, list] : entries_) {
    for (const auto& entry : list) out << key << '\t' << join(entry) << '\n';
  }
}

void ReferenceGrammar::write(const std::string& path) const {
  auto out = open_output(path);
  write(out);
}

// --- split ---------------------------------------------------------------------

Split split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0,1)");
  }
  if (dataset.empty()) throw ValidationError("cannot split an empty dataset");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(dataset.size())));
  Split out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.train : out.validation).push_back(dataset[order[i]]);
  }
  return out;
}

// --- synthesis -----------------------------------------------------------------

const std::vector<std::string>& default_stopwords() {
  static const std::vector<std::string> words = {
      "i",     "the",  "a",    "is",    "am",   "to",    "and",  "my",   "it",    "in",
      "you",   "we",   "are",  "of",    "at",   "on",    "for",  "with", "this",  "that",
      "have",  "has",  "do",   "does",  "be",   "was",   "he",   "she",  "they",  "me",
      "an",    "there", "would", "like", "can",  "please", "yes", "no",   "not",   "so",
      "your",  "our",  "his",  "her",   "their", "from", "by",   "or",   "but",   "what",
      "want",  "some", "here", "very",  "too",  "will",  "just", "also", "then",  "how"};
  return words;
}

void SynthesisConfig::validate() const {
  if (prompt_vocab_size < 1 || response_vocab_size < 1 || num_prompts < 1 || responses_per_prompt < 1) {
    throw ValidationError("synthesis sizes must be >= 1");
  }
  auto in_unit = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!in_unit(language_error_rate) || !in_unit(meaning_error_rate)) {
    throw ValidationError("synthesis error rates must lie in [0,1]");
  }
}

namespace {

constexpr std::string_view kPromptSyllables[] = {"ber", "dan", "ein", "fal", "gen", "hau", "ich", "kom", "lie",
                                                 "mal", "nur", "rei", "sch", "tor", "und", "wer", "zei", "bal"};
constexpr std::string_view kContentSyllables[] = {"ca", "lo", "mi", "ta", "pe", "ru", "so", "ne",
                                                  "di", "fu", "ga", "ki", "vo", "ze", "bu", "ly"};

template <std::size_t N>
std::string make_word(std::size_t index, const std::string_view (&syllables)[N]) {
  std::string word;
  std::size_t k = index;
  int parts = 0;
  do {
    word += syllables[k % N];
    k /= N;
    ++parts;
  } while (k > 0 || parts < 2);
  return word;
}

template <std::size_t N>
std::vector<std::string> make_words(std::size_t count, const std::string_view (&syllables)[N],
                                    std::unordered_set<std::string>& taken) {
  std::vector<std::string> words;
  for (std::size_t i = 0; words.size() < count; ++i) {
    auto w = make_word(i, syllables);
    if (taken.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

struct PromptPlan {
  std::string text;
  std::vector<Tokens> entries;           // grammar entries; entries[0] canonical
  std::vector<std::size_t> content_slots;  // positions holding content words
  std::vector<std::string> content;
};

bool matches_any(const Tokens& seq, const std::vector<Tokens>& entries) {
  return std::find(entries.begin(), entries.end(), seq) != entries.end();
}

Tokens corrupt_language(const Tokens& base, Rng& rng) {
  Tokens out = base;
  for (int attempt = 0; attempt < 16; ++attempt) {
    out = base;
    switch (uniform_index(rng, 3)) {
      case 0: {  // swap two adjacent, distinct tokens
        std::vector<std::size_t> spots;
        for (std::size_t i = 0; i + 1 < out.size(); ++i) {
          if (out[i] != out[i + 1]) spots.push_back(i);
        }
        if (spots.empty()) continue;
        const auto i = spots[uniform_index(rng, spots.size())];
        std::swap(out[i], out[i + 1]);
        return out;
      }
      case 1: {  // drop
        if (out.size() < 2) continue;
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, out.size())));
        return out;
      }
      default: {  // duplicate
        if (out.empty()) continue;
        const auto i = uniform_index(rng, out.size());
        out.insert(out.begin() + static_cast<std::ptrdiff_t>(i), out[i]);
        return out;
      }
    }
  }
  return out;
}

}  // namespace

SyntheticCorpus synthesize_corpus(const SynthesisConfig& config) {
  config.validate();
  Rng rng(config.seed);

  const auto& stop = default_stopwords();
  std::unordered_set<std::string> taken(stop.begin(), stop.end());
  const auto n_function = std::clamp<std::size_t>(static_cast<std::size_t>(config.response_vocab_size) / 3, 1,
                                                  stop.size());
  const std::vector<std::string> function_words(stop.begin(), stop.begin() + static_cast<std::ptrdiff_t>(n_function));
  const std::size_t n_content =
      std::max<std::size_t>(3, static_cast<std::size_t>(config.response_vocab_size) - n_function);
  const auto content_words = make_words(n_content, kContentSyllables, taken);
  const auto prompt_words = make_words(static_cast<std::size_t>(std::max(config.prompt_vocab_size, 3)),
                                       kPromptSyllables, taken);
  const std::size_t n_question = std::max<std::size_t>(1, prompt_words.size() / 6);

  std::vector<PromptPlan> plans;
  std::unordered_set<std::string> prompt_texts;
  for (int p = 0; p < config.num_prompts; ++p) {
    PromptPlan plan;
    for (int attempt = 0;; ++attempt) {
      Tokens prompt{prompt_words[uniform_index(rng, n_question)]};
      const std::size_t n_key = 1 + uniform_index(rng, 2);
      while (prompt.size() < 1 + n_key) {
        auto w = prompt_words[n_question + uniform_index(rng, prompt_words.size() - n_question)];
        if (std::find(prompt.begin(), prompt.end(), w) == prompt.end()) prompt.push_back(std::move(w));
      }
      plan.text = join(prompt);
      if (prompt_texts.insert(plan.text).second || attempt > 64) break;
    }
    const std::size_t n_slots = std::min<std::size_t>(content_words.size(), 1 + uniform_index(rng, 2));
    while (plan.content.size() < n_slots) {
      const auto& w = content_words[uniform_index(rng, content_words.size())];
      if (std::find(plan.content.begin(), plan.content.end(), w) == plan.content.end()) plan.content.push_back(w);
    }
    const std::size_t length = n_slots + 2 + uniform_index(rng, 3);
    std::vector<std::size_t> positions(length);
    for (std::size_t i = 0; i < length; ++i) positions[i] = i;
    shuffle(positions, rng);
    plan.content_slots.assign(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(n_slots));
    std::sort(plan.content_slots.begin(), plan.content_slots.end());
    Tokens canonical(length);
    for (std::size_t i = 0; i < length; ++i) {
      canonical[i] = function_words[uniform_index(rng, function_words.size())];
    }
    for (std::size_t s = 0; s < n_slots; ++s) canonical[plan.content_slots[s]] = plan.content[s];
    plan.entries.push_back(canonical);
    if (function_words.size() > 1) {
      // A second accepted wording: one function word exchanged for another.
      Tokens variant = canonical;
      std::vector<std::size_t> fslots;
      for (std::size_t i = 0; i < length; ++i) {
        if (std::find(plan.content_slots.begin(), plan.content_slots.end(), i) == plan.content_slots.end()) {
          fslots.push_back(i);
        }
      }
      const auto at = fslots[uniform_index(rng, fslots.size())];
      do {
        variant[at] = function_words[uniform_index(rng, function_words.size())];
      } while (variant[at] == canonical[at]);
      plan.entries.push_back(std::move(variant));
    }
    plans.push_back(std::move(plan));
  }

  SyntheticCorpus out;
  for (const auto& plan : plans) {
    for (const auto& entry : plan.entries) out.grammar.add(plan.text, entry);
  }

  for (std::size_t p = 0; p < plans.size(); ++p) {
    const auto& plan = plans[p];
    for (int k = 0; k < config.responses_per_prompt; ++k) {
      const bool meaning_error = bernoulli(rng, config.meaning_error_rate);
      const bool language_error = bernoulli(rng, config.language_error_rate);
      Tokens response = plan.entries[uniform_index(rng, plan.entries.size())];

      if (meaning_error) {
        std::vector<std::string> foreign;
        if (plans.size() > 1) {
          std::size_t q = uniform_index(rng, plans.size() - 1);
          if (q >= p) ++q;
          foreign = plans[q].content;
        }
        // Fall back to the whole content inventory when the other prompt
        // shares every content word with this one.
        auto pick_foreign = [&](const std::vector<std::string>& pool) -> std::string {
          std::vector<std::string> usable;
          for (const auto& w : pool) {
            if (std::find(plan.content.begin(), plan.content.end(), w) == plan.content.end()) usable.push_back(w);
          }
          if (usable.empty()) return {};
          return usable[uniform_index(rng, usable.size())];
        };
        const std::size_t first = uniform_index(rng, plan.content_slots.size());
        for (std::size_t s = 0; s < plan.content_slots.size(); ++s) {
          if (s != first && !bernoulli(rng, 0.5)) continue;
          auto w = pick_foreign(foreign);
          if (w.empty()) w = pick_foreign(content_words);
          if (!w.empty()) response[plan.content_slots[s]] = std::move(w);
        }
      }
      if (language_error) {
        Tokens corrupted = response;
        for (int attempt = 0; attempt < 16; ++attempt) {
          corrupted = corrupt_language(response, rng);
          if (corrupted != response && !matches_any(corrupted, plan.entries)) break;
        }
        response = std::move(corrupted);
      }

      char id[32];
      std::snprintf(id, sizeof id, "x%03zu_%03d", p, k);
      out.dataset.push_back({id, plan.text, join(response), !language_error, !meaning_error});
    }
  }
  return out;
}

}  // namespace l2grade::corpus
