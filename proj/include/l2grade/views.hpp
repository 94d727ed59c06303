#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/corpus.hpp"
#include "l2grade/embeddings.hpp"
#include "l2grade/features.hpp"
#include "l2grade/ngram.hpp"
#include "l2grade/tensor.hpp"

namespace l2grade::features {

enum class ViewKind { standard, grammar, lm_set, bow_concat, tfidf_concat, embedding_sequence };

std::string to_string(ViewKind kind);
ViewKind parse_view_kind(const std::string& name);

enum class EmbeddingSource { static_table, contextual };

/// One expert's representation of an exchange.
struct FeatureView {
  std::string name;
  ViewKind kind = ViewKind::bow_concat;
  std::vector<std::size_t> lm_indices;  // lm_set: which fitted models, in order
  bool marker = false;                  // embedding_sequence
  EmbeddingSource source = EmbeddingSource::static_table;

  bool is_sequence() const { return kind == ViewKind::embedding_sequence; }

  nlohmann::json to_json() const;
  static FeatureView from_json(const nlohmann::json& j);
};

/// Everything fitted on the training split that views draw on.
struct FeatureResources {
  corpus::Vocabulary vocabulary;
  IdfTable idf;
  std::vector<lm::NGramModel> lms;
  corpus::ReferenceGrammar grammar;
  ContentWordPredicate content;
  std::optional<embed::EmbeddingTable> static_embeddings;
  std::optional<embed::ContextualEmbeddingStore> contextual;
};

/// Input width of the view (per step for sequence views). Throws when a
/// resource the view needs is absent.
std::size_t view_width(const FeatureView& view, const FeatureResources& res);

NetInput extract(const FeatureView& view, const corpus::LabeledExchange& ex, const FeatureResources& res);

}  // namespace l2grade::features
