#include "l2grade/ngram.hpp"

#include <cmath>
#include <fstream>

namespace l2grade::lm {

using nlohmann::json;

std::string to_string(CorpusRole role) {
  switch (role) {
    case CorpusRole::generic:
      return "generic";
    case CorpusRole::train_rejected:
      return "train-rejected";
    case CorpusRole::train_accepted:
      return "train-accepted";
  }
  return "generic";
}

CorpusRole parse_role(const std::string& name) {
  if (name == "generic") return CorpusRole::generic;
  if (name == "train-rejected") return CorpusRole::train_rejected;
  if (name == "train-accepted") return CorpusRole::train_accepted;
  throw ValidationError("unknown corpus role: " + name);
}

NGramModel::NGramModel(int order, CorpusRole role, bool boundary, corpus::Vocabulary vocab)
    : order_(order),
      role_(role),
      boundary_(boundary),
      vocab_(std::move(vocab)),
      support_size_(vocab_.size() - (boundary ? 1 : 0)),
      grams_(static_cast<std::size_t>(order)),
      contexts_(static_cast<std::size_t>(order)) {}

NGramModel NGramModel::train(const std::vector<Tokens>& corpus, int order, CorpusRole role, bool boundary) {
  if (order < 1 || order > kMaxOrder) {
    throw ValidationError("n-gram order must lie in [1," + std::to_string(kMaxOrder) + "], got " +
                          std::to_string(order));
  }
  if (corpus.empty()) throw ValidationError("cannot train an n-gram model on an empty corpus");

  NGramModel model(order, role, boundary, corpus::Vocabulary::build(corpus, 1, boundary));
  const auto& vocab = model.vocab_;
  std::vector<Id> ids;
  for (const auto& seq : corpus) {
    ids.clear();
    if (boundary) ids.push_back(vocab.index(corpus::Vocabulary::kStart));
    for (const auto& w : seq) ids.push_back(vocab.index(w));
    if (boundary) ids.push_back(vocab.index(corpus::Vocabulary::kEnd));
    const std::size_t first = boundary ? 1 : 0;
    for (std::size_t i = first; i < ids.size(); ++i) {
      const std::size_t max_k = std::min<std::size_t>(static_cast<std::size_t>(order), i + 1);
      for (std::size_t k = 1; k <= max_k; ++k) {
        model.increment(std::vector<Id>(ids.begin() + static_cast<std::ptrdiff_t>(i + 1 - k),
                                        ids.begin() + static_cast<std::ptrdiff_t>(i + 1)),
                        1);
      }
    }
  }
  return model;
}

void NGramModel::increment(std::vector<Id> gram, long by) {
  const std::size_t k = gram.size();
  long& c = grams_[k - 1][gram];
  const bool fresh = c == 0;
  c += by;
  gram.pop_back();
  auto& stats = contexts_[k - 1][gram];
  stats.total += by;
  if (fresh) ++stats.types;
}

void NGramModel::add_observation(std::span<const Id> context, Id word) {
  if (word >= vocab_.size()) throw ValidationError("word id out of range");
  const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
  const auto ctx = context.subspan(context.size() - keep);
  for (std::size_t len = 0; len <= keep; ++len) {
    std::vector<Id> gram(ctx.end() - static_cast<std::ptrdiff_t>(len), ctx.end());
    gram.push_back(word);
    increment(std::move(gram), 1);
  }
}

std::vector<NGramModel::Id> NGramModel::support() const {
  std::vector<Id> ids;
  const Id start = boundary_ ? vocab_.index(corpus::Vocabulary::kStart) : vocab_.size();
  for (Id i = 0; i < vocab_.size(); ++i) {
    if (i != start) ids.push_back(i);
  }
  return ids;
}

long NGramModel::count(std::span<const Id> context, Id word) const {
  if (context.size() >= static_cast<std::size_t>(order_)) return 0;
  std::vector<Id> gram(context.begin(), context.end());
  gram.push_back(word);
  const auto& table = grams_[gram.size() - 1];
  const auto it = table.find(gram);
  return it == table.end() ? 0 : it->second;
}

std::vector<std::vector<NGramModel::Id>> NGramModel::observed_contexts(std::size_t length) const {
  std::vector<std::vector<Id>> out;
  if (length >= static_cast<std::size_t>(order_)) return out;
  for (const auto& [ctx, stats] : contexts_[length]) {
    if (stats.total > 0) out.push_back(ctx);
  }
  return out;
}

double NGramModel::prob(std::span<const Id> context, Id word) const {
  const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
  return prob_recursive(context.subspan(context.size() - keep), word);
}

double NGramModel::prob_recursive(std::span<const Id> context, Id word) const {
  const double uniform = 1.0 / static_cast<double>(support_size_);
  const double lower = context.empty() ? uniform : prob_recursive(context.subspan(1), word);
  const auto& table = contexts_[context.size()];
  const auto it = table.find(std::vector<Id>(context.begin(), context.end()));
  if (it == table.end() || it->second.total == 0) return lower;
  const double c = static_cast<double>(count(context, word));
  const double total = static_cast<double>(it->second.total);
  const double types = static_cast<double>(it->second.types);
  return (c + types * lower) / (total + types);
}

LmScore NGramModel::score(const Tokens& tokens) const {
  LmScore out;
  std::vector<Id> ids;
  if (boundary_) ids.push_back(vocab_.index(corpus::Vocabulary::kStart));
  for (const auto& w : tokens) {
    if (!vocab_.contains(w)) ++out.oov_count;
    ids.push_back(vocab_.index(w));
  }
  if (boundary_) ids.push_back(vocab_.index(corpus::Vocabulary::kEnd));

  const std::size_t first = boundary_ ? 1 : 0;
  for (std::size_t i = first; i < ids.size(); ++i) {
    const std::size_t history = std::min<std::size_t>(static_cast<std::size_t>(order_ - 1), i);
    std::span<const Id> context(ids.data() + i - history, history);
    out.log10_prob += std::log10(prob_recursive(context, ids[i]));
    ++out.token_count;
    while (!context.empty() && count(context, ids[i]) == 0) {
      ++out.backoff_count;
      context = context.subspan(1);
    }
  }
  return out;
}

json NGramModel::to_json() const {
  json counts = json::array();
  for (const auto& table : grams_) {
    json rows = json::array();
    for (const auto& [gram, c] : table) {
      json row = gram;
      row.push_back(c);
      rows.push_back(std::move(row));
    }
    counts.push_back(std::move(rows));
  }
  return {{"format", "l2grade-ngram"},
          {"version", 1},
          {"order", order_},
          {"role", to_string(role_)},
          {"boundary", boundary_},
          {"vocabulary", vocab_.regular_words()},
          {"counts", std::move(counts)}};
}

NGramModel NGramModel::from_json(const json& j) {
  if (j.value("format", "") != "l2grade-ngram" || j.value("version", 0) != 1) {
    throw ParseError("not an l2grade-ngram v1 model");
  }
  const int order = j.at("order").get<int>();
  if (order < 1 || order > kMaxOrder) throw ParseError("n-gram order out of range in model file");
  const bool boundary = j.at("boundary").get<bool>();
  NGramModel model(order, parse_role(j.at("role").get<std::string>()), boundary,
                   corpus::Vocabulary(j.at("vocabulary").get<std::vector<std::string>>(), boundary));
  const auto& counts = j.at("counts");
  if (counts.size() != static_cast<std::size_t>(order)) throw ParseError("count tables do not match order");
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (const auto& row : counts[k]) {
      if (row.size() != k + 2) throw ParseError("malformed count row at order " + std::to_string(k + 1));
      std::vector<Id> gram;
      for (std::size_t i = 0; i <= k; ++i) {
        const auto id = row[i].get<Id>();
        if (id >= model.vocab_.size()) throw ParseError("word id out of range in count table");
        gram.push_back(id);
      }
      model.increment(std::move(gram), row[k + 1].get<long>());
    }
  }
  return model;
}

void NGramModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << to_json().dump() << '\n';
}

NGramModel NGramModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return from_json(json::parse(in));
}

double perplexity(const NGramModel& model, const std::vector<Tokens>& corpus) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& seq : corpus) {
    const auto s = model.score(seq);
    total += s.log10_prob;
    n += s.token_count;
  }
  if (n == 0) throw ValidationError("perplexity over zero scored tokens");
  return std::pow(10.0, -total / static_cast<double>(n));
}

}  // namespace l2grade::lm
