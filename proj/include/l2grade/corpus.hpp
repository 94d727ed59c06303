#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "l2grade/common.hpp"

namespace l2grade::corpus {

/// The four joint outcomes of the (language, meaning) judgement. Index order
/// is fixed: 0=(C,C), 1=(C,I), 2=(I,C), 3=(I,I).
class ClassLabel {
 public:
  static constexpr int kCount = 4;
  static constexpr int kAccept = 0;

  ClassLabel(bool language_correct, bool meaning_correct)
      : index_((language_correct ? 0 : 2) + (meaning_correct ? 0 : 1)) {}

  static ClassLabel from_index(int index);

  int index() const { return index_; }
  bool language_correct() const { return index_ < 2; }
  bool meaning_correct() const { return index_ % 2 == 0; }
  bool accept() const { return index_ == kAccept; }

  friend bool operator==(ClassLabel, ClassLabel) = default;

 private:
  int index_;
};

struct LabeledExchange {
  std::string id;
  std::string prompt;
  std::string response;
  bool language_correct = false;
  bool meaning_correct = false;

  ClassLabel label() const { return {language_correct, meaning_correct}; }
  bool gold_accept() const { return language_correct && meaning_correct; }

  friend bool operator==(const LabeledExchange&, const LabeledExchange&) = default;
};

using Dataset = std::vector<LabeledExchange>;

/// Lowercase, split on whitespace, strip edge punctuation, drop empties.
Tokens tokenize(std::string_view text);

/// Canonical key linking an exchange to its reference-grammar entries: the
/// tokenized prompt joined by single spaces.
std::string prompt_key(std::string_view prompt_text);

std::string join(const Tokens& tokens, std::string_view sep = " ");

Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset parse_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& dataset);
void write_dataset(const std::string& path, const Dataset& dataset);

/// Throws ValidationError naming the first repeated id.
void check_unique_ids(const Dataset& dataset);

class Vocabulary {
 public:
  static constexpr std::string_view kUnknown = "<unk>";
  static constexpr std::string_view kStart = "_start_";
  static constexpr std::string_view kEnd = "_end_";

  /// Unknown token only.
  Vocabulary();

  /// Words in the given order, optionally followed by the boundary tokens;
  /// the unknown token always takes the last index.
  explicit Vocabulary(std::vector<std::string> words, bool with_boundary = false);

  /// Every word with frequency >= min_count, ordered by descending
  /// frequency then lexicographically.
  static Vocabulary build(const std::vector<Tokens>& corpus, int min_count = 1,
                          bool with_boundary = false);

  std::size_t size() const { return words_.size(); }
  std::size_t unknown_index() const { return words_.size() - 1; }
  bool has_boundary() const { return has_boundary_; }

  bool contains(std::string_view word) const;
  /// Index of `word`, or the unknown index.
  std::size_t index(std::string_view word) const;
  const std::string& word(std::size_t index) const { return words_.at(index); }
  const std::vector<std::string>& words() const { return words_; }

  /// Words excluding the unknown and boundary tokens.
  std::vector<std::string> regular_words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  bool has_boundary_ = false;
};

/// prompt key -> known-correct responses.
class ReferenceGrammar {
 public:
  void add(const std::string& key, Tokens response);
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  /// Throws ValidationError when the prompt has no entry.
  const std::vector<Tokens>& entries(const std::string& key) const;
  const std::map<std::string, std::vector<Tokens>>& all() const { return entries_; }
  std::size_t prompt_count() const { return entries_.size(); }

  static ReferenceGrammar read(std::istream& in, const std::string& source = "<stream>");
  static ReferenceGrammar parse(const std::string& path);
  void write(std::ostream& out) const;
  void write(const std::string& path) const;

 private:
  std::map<std::string, std::vector<Tokens>> entries_;
};

struct Split {
  Dataset train;
  Dataset validation;
};

/// Uniform random partition; |train| = round(train_fraction * N).
Split split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

struct SynthesisConfig {
  int prompt_vocab_size = 60;
  int response_vocab_size = 90;
  int num_prompts = 40;
  int responses_per_prompt = 50;
  double language_error_rate = 0.3;
  double meaning_error_rate = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Dataset dataset;
  ReferenceGrammar grammar;
};

/// Deterministic stand-in for challenge data: per-prompt templates with
/// injected language errors (swap/drop/duplicate) and meaning errors
/// (content words borrowed from another prompt).
SyntheticCorpus synthesize_corpus(const SynthesisConfig& config);

/// Shipped stopword list; content words are the words not on it.
const std::vector<std::string>& default_stopwords();

}  // namespace l2grade::corpus
