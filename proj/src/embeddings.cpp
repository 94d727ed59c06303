#include "l2grade/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace l2grade::embed {

using nlohmann::json;

namespace {

std::string format_real(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_real(const std::string& s, double& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError(what + " has a non-finite component");
  }
}

Sequence from_json_rows(const json& rows, std::size_t dim, const std::string& what) {
  Sequence seq(dim);
  for (const auto& row : rows) {
    auto v = row.get<std::vector<double>>();
    if (v.size() != dim) throw ParseError(what + ": vector width " + std::to_string(v.size()) + " != " + std::to_string(dim));
    check_finite(v, what);
    seq.push(v);
  }
  return seq;
}

json to_json_rows(const Sequence& seq) {
  json rows = json::array();
  for (std::size_t t = 0; t < seq.steps(); ++t) {
    const auto s = seq.step(t);
    rows.push_back(std::vector<double>(s.begin(), s.end()));
  }
  return rows;
}

void append_step(Sequence& out, std::span<const double> v, bool marker) {
  out.push(v);
  if (marker) out.data.push_back(0.0);
}

Sequence assemble(const std::vector<std::span<const double>>& prompt,
                  const std::vector<std::span<const double>>& response, std::size_t dim, bool marker) {
  Sequence out(dim + (marker ? 1 : 0));
  for (auto v : prompt) append_step(out, v, marker);
  if (marker) {
    out.data.insert(out.data.end(), dim, 0.0);
    out.data.push_back(1.0);
  }
  for (auto v : response) append_step(out, v, marker);
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// --- EmbeddingTable ------------------------------------------------------------

void EmbeddingTable::add(const std::string& word, std::vector<double> vector) {
  if (vector.size() != dim_) {
    throw ValidationError("embedding for '" + word + "' has width " + std::to_string(vector.size()) +
                          ", table width is " + std::to_string(dim_));
  }
  check_finite(vector, "embedding for '" + word + "'");
  if (!index_.emplace(word, words_.size()).second) throw ValidationError("duplicate embedding word: " + word);
  words_.push_back(word);
  vectors_.push_back(std::move(vector));
}

std::span<const double> EmbeddingTable::lookup(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) return zero_;
  return vectors_[it->second];
}

EmbeddingTable EmbeddingTable::read(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(source + ": missing header line");
  std::istringstream header(line);
  long count = -1;
  long dim = -1;
  if (!(header >> count >> dim) || count < 0 || dim < 1) {
    throw ParseError(source + ": line 1: header must be '<word-count> <dim>'");
  }
  EmbeddingTable table(static_cast<std::size_t>(dim));
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string word;
    row >> word;
    std::vector<double> v;
    std::string field;
    while (row >> field) {
      double x = 0.0;
      if (!parse_real(field, x)) {
        throw ParseError(source + ": line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
      v.push_back(x);
    }
    if (v.size() != table.dim_) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                       " values, got " + std::to_string(v.size()));
    }
    try {
      table.add(word, std::move(v));
    } catch (const ValidationError& e) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (table.size() != static_cast<std::size_t>(count)) {
    throw ParseError(source + ": header declares " + std::to_string(count) + " words, file has " +
                     std::to_string(table.size()));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read(in, path);
}

void EmbeddingTable::write(std::ostream& out) const {
  out << words_.size() << ' ' << dim_ << '\n';
  for (std::size_t i = 0; i < words_.size(); ++i) {
    out << words_[i];
    for (double x : vectors_[i]) out << ' ' << format_real(x);
    out << '\n';
  }
}

void EmbeddingTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write(out);
}

// --- ContextualEmbeddingStore -----------------------------------------------------

void ContextualEmbeddingStore::add(const std::string& id, Entry entry) {
  if (entry.prompt.dim != dim_ || entry.response.dim != dim_) {
    throw ValidationError("contextual entry '" + id + "' has the wrong width");
  }
  if (!entries_.emplace(id, std::move(entry)).second) throw ValidationError("duplicate contextual entry: " + id);
}

const ContextualEmbeddingStore::Entry& ContextualEmbeddingStore::at(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("contextual embedding store has no entry for exchange " + id);
  return it->second;
}

ContextualEmbeddingStore ContextualEmbeddingStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  const json j = json::parse(in);
  if (j.value("format", "") != "l2grade-contextual" || j.value("version", 0) != 1) {
    throw ParseError(path + ": not an l2grade-contextual v1 store");
  }
  const auto dim = j.at("dim").get<std::size_t>();
  if (dim < 1) throw ParseError(path + ": dim must be >= 1");
  ContextualEmbeddingStore store(dim);
  for (const auto& [id, e] : j.at("entries").items()) {
    store.add(id, {from_json_rows(e.at("prompt"), dim, path + ": " + id + ".prompt"),
                   from_json_rows(e.at("response"), dim, path + ": " + id + ".response")});
  }
  return store;
}

void ContextualEmbeddingStore::save(const std::string& path) const {
  json entries = json::object();
  for (const auto& [id, e] : entries_) {
    entries[id] = {{"prompt", to_json_rows(e.prompt)}, {"response", to_json_rows(e.response)}};
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << json{{"format", "l2grade-contextual"}, {"version", 1}, {"dim", dim_}, {"entries", entries}}.dump() << '\n';
}

// --- skip-gram -----------------------------------------------------------------------

SkipGramResult train_skipgram(const std::vector<Tokens>& corpus, const SkipGramConfig& config) {
  if (config.dim < 2 || config.window < 1 || config.negatives < 1) {
    throw ValidationError("skip-gram requires dim >= 2, window >= 1, negatives >= 1");
  }
  if (config.epochs < 1 || !(config.learning_rate > 0.0)) {
    throw ValidationError("skip-gram requires epochs >= 1 and a positive learning rate");
  }

  // Vocabulary in first-occurrence order keeps the table layout seed-independent.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> words;
  std::vector<double> freq;
  std::vector<std::vector<std::size_t>> sentences;
  for (const auto& seq : corpus) {
    std::vector<std::size_t> ids;
    for (const auto& w : seq) {
      auto [it, fresh] = index.emplace(w, words.size());
      if (fresh) {
        words.push_back(w);
        freq.push_back(0.0);
      }
      freq[it->second] += 1.0;
      ids.push_back(it->second);
    }
    sentences.push_back(std::move(ids));
  }
  if (words.size() < 2) throw ValidationError("skip-gram corpus needs at least 2 distinct words");

  const std::size_t V = words.size();
  const std::size_t d = config.dim;
  Rng rng(config.seed);

  std::vector<double> noise_cdf(V);
  double acc = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    acc += std::pow(freq[i], 0.75);
    noise_cdf[i] = acc;
  }
  auto draw_noise = [&]() {
    const double u = uniform01(rng) * acc;
    const auto it = std::upper_bound(noise_cdf.begin(), noise_cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - noise_cdf.begin()), V - 1);
  };

  std::vector<double> in_vec(V * d);
  std::vector<double> out_vec(V * d, 0.0);
  for (double& x : in_vec) x = (uniform01(rng) - 0.5) / static_cast<double>(d);

  std::vector<double> grad(d);
  SkipGramResult result;
  const double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = 0.0;
    std::size_t pairs = 0;
    for (const auto& ids : sentences) {
      for (std::size_t c = 0; c < ids.size(); ++c) {
        const std::size_t lo = c >= config.window ? c - config.window : 0;
        const std::size_t hi = std::min(ids.size() - 1, c + config.window);
        double* center = &in_vec[ids[c] * d];
        for (std::size_t o = lo; o <= hi; ++o) {
          if (o == c) continue;
          std::fill(grad.begin(), grad.end(), 0.0);
          auto update = [&](std::size_t target, double label) {
            double* ctx = &out_vec[target * d];
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += center[k] * ctx[k];
            const double p = sigmoid(dot);
            loss += label > 0.5 ? -std::log(std::max(p, 1e-12)) : -std::log(std::max(1.0 - p, 1e-12));
            const double g = lr * (label - p);
            for (std::size_t k = 0; k < d; ++k) {
              grad[k] += g * ctx[k];
              ctx[k] += g * center[k];
            }
          };
          update(ids[o], 1.0);
          for (std::size_t n = 0; n < config.negatives; ++n) {
            const auto neg = draw_noise();
            if (neg == ids[o]) continue;
            update(neg, 0.0);
          }
          for (std::size_t k = 0; k < d; ++k) center[k] += grad[k];
          ++pairs;
        }
      }
    }
    result.epoch_loss.push_back(pairs == 0 ? 0.0 : loss / static_cast<double>(pairs));
  }

  result.table = EmbeddingTable(d);
  for (std::size_t i = 0; i < V; ++i) {
    result.table.add(words[i], std::vector<double>(in_vec.begin() + static_cast<std::ptrdiff_t>(i * d),
                                                   in_vec.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
  }
  return result;
}

// --- sequences -------------------------------------------------------------------------

Sequence embed_sequence(const Tokens& prompt, const Tokens& response, const EmbeddingTable& table, bool marker) {
  std::vector<std::span<const double>> p;
  std::vector<std::span<const double>> r;
  for (const auto& w : prompt) p.push_back(table.lookup(w));
  for (const auto& w : response) r.push_back(table.lookup(w));
  return assemble(p, r, table.dim(), marker);
}

Sequence embed_sequence(const std::string& exchange_id, const Tokens& prompt, const Tokens& response,
                        const ContextualEmbeddingStore& store, bool marker) {
  const auto& entry = store.at(exchange_id);
  if (entry.prompt.steps() != prompt.size() || entry.response.steps() != response.size()) {
    throw ValidationError("contextual entry for " + exchange_id + " does not match the tokenization (" +
                          std::to_string(entry.prompt.steps()) + "+" + std::to_string(entry.response.steps()) +
                          " vectors for " + std::to_string(prompt.size()) + "+" + std::to_string(response.size()) +
                          " tokens)");
  }
  std::vector<std::span<const double>> p;
  std::vector<std::span<const double>> r;
  for (std::size_t t = 0; t < entry.prompt.steps(); ++t) p.push_back(entry.prompt.step(t));
  for (std::size_t t = 0; t < entry.response.steps(); ++t) r.push_back(entry.response.step(t));
  return assemble(p, r, store.dim(), marker);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace l2grade::embed
