#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <unordered_set>
#include <vector>

#include "l2grade/corpus.hpp"
#include "l2grade/ngram.hpp"

namespace l2grade::features {

using Vector = std::vector<double>;

/// A word is a content word iff it is not on the stopword list.
class ContentWordPredicate {
 public:
  ContentWordPredicate();  // shipped default list
  explicit ContentWordPredicate(const std::vector<std::string>& stopwords);
  bool operator()(const std::string& word) const { return stop_.count(word) == 0; }
  /// Sorted stopword list.
  std::vector<std::string> stopwords() const;

 private:
  std::unordered_set<std::string> stop_;
};

/// [word count, content-word count, OOV count, OOV count / max(1, word count)]
Vector standard_features(const Tokens& response, const corpus::Vocabulary& vocab,
                         const ContentWordPredicate& is_content);

/// Word-level Levenshtein distance with unit costs.
std::size_t edit_distance(const Tokens& a, const Tokens& b);

/// [min distance, min distance / max(|response|, |entry|, 1), exact match,
///  |best entry|, |response| - |best entry|]. Ties on distance prefer the
///  shorter entry, then the lexicographically smaller one.
Vector grammar_features(const Tokens& response, const std::vector<Tokens>& entries);

/// Per model: [log10 prob, log10 prob per scored token, OOV count,
/// OOV count / max(1, |response|), backoff count].
Vector lm_feature_block(const Tokens& response, const std::vector<const lm::NGramModel*>& models);

/// Occurrence counts over the vocabulary; OOV tokens land on the unknown index.
Vector bow_vector(const Tokens& tokens, const corpus::Vocabulary& vocab);

/// Smoothed idf: ln((1+N)/(1+df)) + 1, one entry per vocabulary index.
class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::vector<double> idf, std::size_t documents) : idf_(std::move(idf)), documents_(documents) {}

  static IdfTable fit(const std::vector<Tokens>& documents, const corpus::Vocabulary& vocab);

  std::size_t size() const { return idf_.size(); }
  std::size_t documents() const { return documents_; }
  double operator[](std::size_t i) const { return idf_[i]; }
  const std::vector<double>& values() const { return idf_; }

 private:
  std::vector<double> idf_;
  std::size_t documents_ = 0;
};

Vector tfidf_vector(const Tokens& tokens, const corpus::Vocabulary& vocab, const IdfTable& idf);

Vector concat_prompt_response(const Vector& prompt, const Vector& response);

/// One line per exchange: id, tab, space-separated reals.
void write_feature_dump(std::ostream& out, const std::vector<std::string>& ids, const std::vector<Vector>& rows);

}  // namespace l2grade::features
