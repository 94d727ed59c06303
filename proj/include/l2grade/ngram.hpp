#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/common.hpp"
#include "l2grade/corpus.hpp"

namespace l2grade::lm {

enum class CorpusRole { generic, train_rejected, train_accepted };

std::string to_string(CorpusRole role);
CorpusRole parse_role(const std::string& name);

struct LmScore {
  double log10_prob = 0.0;
  std::size_t token_count = 0;  // scored positions, including _end_ when bounded
  std::size_t oov_count = 0;
  std::size_t backoff_count = 0;
};

/// Order 1..4 word model with interpolated Witten-Bell smoothing:
///
///   P(w|h) = (c(h,w) + T(h) * P(w|h')) / (c(h) + T(h))
///
/// where h' drops the oldest word of h, c(h) is the count of h as a context
/// and T(h) the number of distinct words seen after it. Unseen contexts
/// defer entirely to h'. The unigram level interpolates with the uniform
/// distribution over the prediction support: every vocabulary word, the
/// unknown token and `_end_` (never `_start_`).
class NGramModel {
 public:
  using Id = std::size_t;

  static constexpr int kMaxOrder = 4;

  static NGramModel train(const std::vector<Tokens>& corpus, int order, CorpusRole role, bool boundary);

  int order() const { return order_; }
  CorpusRole role() const { return role_; }
  bool boundary() const { return boundary_; }
  const corpus::Vocabulary& vocabulary() const { return vocab_; }

  /// Word ids that can be predicted; probabilities over it sum to one.
  std::vector<Id> support() const;

  /// P(word | context). Context is oldest-first; only its last order-1 ids
  /// are used.
  double prob(std::span<const Id> context, Id word) const;

  /// Count of the n-gram (context..., word) with 0 <= |context| < order.
  long count(std::span<const Id> context, Id word) const;

  /// Contexts observed in training for the given context length.
  std::vector<std::vector<Id>> observed_contexts(std::size_t length) const;

  /// Adds one occurrence of (context, word) and of each of its suffixes.
  void add_observation(std::span<const Id> context, Id word);

  LmScore score(const Tokens& tokens) const;

  nlohmann::json to_json() const;
  static NGramModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static NGramModel load(const std::string& path);

 private:
  struct ContextStats {
    long total = 0;
    long types = 0;
  };

  NGramModel(int order, CorpusRole role, bool boundary, corpus::Vocabulary vocab);

  double prob_recursive(std::span<const Id> context, Id word) const;
  void increment(std::vector<Id> gram, long by);

  int order_;
  CorpusRole role_;
  bool boundary_;
  corpus::Vocabulary vocab_;
  std::size_t support_size_;
  std::vector<std::map<std::vector<Id>, long>> grams_;             // [k-1]: k-gram -> count
  std::vector<std::map<std::vector<Id>, ContextStats>> contexts_;  // [k-1]: (k-1)-token context
};

/// 10^(-total log10 prob / scored tokens) over a corpus.
double perplexity(const NGramModel& model, const std::vector<Tokens>& corpus);

}  // namespace l2grade::lm
