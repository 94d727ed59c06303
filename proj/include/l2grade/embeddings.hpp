#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "l2grade/common.hpp"
#include "l2grade/tensor.hpp"

namespace l2grade::embed {

/// word -> d-vector; absent words read as the zero vector.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim), zero_(dim, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& word) const { return index_.count(word) > 0; }

  void add(const std::string& word, std::vector<double> vector);
  std::span<const double> lookup(const std::string& word) const;

  /// "<count> <dim>" header, then "word v_1 ... v_dim" per line.
  static EmbeddingTable read(std::istream& in, const std::string& source = "<stream>");
  static EmbeddingTable load(const std::string& path);
  void write(std::ostream& out) const;
  void save(const std::string& path) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.words_ == b.words_ && a.vectors_ == b.vectors_;
  }

 private:
  std::size_t dim_;
  std::vector<std::string> words_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> zero_;
};

/// Precomputed per-token vectors keyed by exchange id.
class ContextualEmbeddingStore {
 public:
  struct Entry {
    Sequence prompt;
    Sequence response;
  };

  explicit ContextualEmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  void add(const std::string& id, Entry entry);
  bool contains(const std::string& id) const { return entries_.count(id) > 0; }
  /// Throws ValidationError naming the missing exchange id.
  const Entry& at(const std::string& id) const;

  /// {"format":"l2grade-contextual","version":1,"dim":d,
  ///  "entries":{id:{"prompt":[[...],...],"response":[[...],...]}}}
  static ContextualEmbeddingStore load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::size_t dim_;
  std::map<std::string, Entry> entries_;
};

struct SkipGramConfig {
  std::size_t dim = 16;
  std::size_t window = 2;
  std::size_t negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

struct SkipGramResult {
  EmbeddingTable table;
  std::vector<double> epoch_loss;  // mean logistic loss per (center, context) pair
};

/// Skip-gram with negative sampling (unigram^0.75 noise), plain SGD.
SkipGramResult train_skipgram(const std::vector<Tokens>& corpus, const SkipGramConfig& config);

/// Prompt vectors followed by response vectors. With `marker`, each step
/// gains one trailing component fixed at 0 and a separator step, zero except
/// for that component, sits between prompt and response.
Sequence embed_sequence(const Tokens& prompt, const Tokens& response, const EmbeddingTable& table, bool marker);
Sequence embed_sequence(const std::string& exchange_id, const Tokens& prompt, const Tokens& response,
                        const ContextualEmbeddingStore& store, bool marker);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace l2grade::embed
