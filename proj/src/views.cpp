#include "l2grade/views.hpp"

namespace l2grade::features {

using nlohmann::json;

std::string to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::standard:
      return "standard";
    case ViewKind::grammar:
      return "grammar";
    case ViewKind::lm_set:
      return "lm-set";
    case ViewKind::bow_concat:
      return "bow-concat";
    case ViewKind::tfidf_concat:
      return "tfidf-concat";
    case ViewKind::embedding_sequence:
      return "embedding-sequence";
  }
  return "?";
}

ViewKind parse_view_kind(const std::string& name) {
  for (auto k : {ViewKind::standard, ViewKind::grammar, ViewKind::lm_set, ViewKind::bow_concat,
                 ViewKind::tfidf_concat, ViewKind::embedding_sequence}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown feature view kind: " + name);
}

json FeatureView::to_json() const {
  json j = {{"name", name}, {"kind", to_string(kind)}};
  if (kind == ViewKind::lm_set) j["lms"] = lm_indices;
  if (kind == ViewKind::embedding_sequence) {
    j["marker"] = marker;
    j["source"] = source == EmbeddingSource::static_table ? "static" : "contextual";
  }
  return j;
}

FeatureView FeatureView::from_json(const json& j) {
  FeatureView v;
  v.name = j.at("name").get<std::string>();
  v.kind = parse_view_kind(j.at("kind").get<std::string>());
  if (v.kind == ViewKind::lm_set) {
    v.lm_indices = j.at("lms").get<std::vector<std::size_t>>();
    if (v.lm_indices.empty()) throw ValidationError("view '" + v.name + "': lm-set needs at least one model");
  }
  if (v.kind == ViewKind::embedding_sequence) {
    v.marker = j.value("marker", false);
    const auto src = j.value("source", std::string("static"));
    if (src == "static") {
      v.source = EmbeddingSource::static_table;
    } else if (src == "contextual") {
      v.source = EmbeddingSource::contextual;
    } else {
      throw ValidationError("view '" + v.name + "': unknown embedding source " + src);
    }
  }
  return v;
}

namespace {

const embed::EmbeddingTable& static_table(const FeatureView& view, const FeatureResources& res) {
  if (!res.static_embeddings) throw ValidationError("view '" + view.name + "' needs a static embedding table");
  return *res.static_embeddings;
}

const embed::ContextualEmbeddingStore& contextual_store(const FeatureView& view, const FeatureResources& res) {
  if (!res.contextual) throw ValidationError("view '" + view.name + "' needs a contextual embedding store");
  return *res.contextual;
}

std::vector<const lm::NGramModel*> selected_lms(const FeatureView& view, const FeatureResources& res) {
  std::vector<const lm::NGramModel*> models;
  for (auto i : view.lm_indices) {
    if (i >= res.lms.size()) {
      throw ValidationError("view '" + view.name + "' references language model " + std::to_string(i) +
                            " but only " + std::to_string(res.lms.size()) + " are fitted");
    }
    models.push_back(&res.lms[i]);
  }
  return models;
}

}  // namespace

std::size_t view_width(const FeatureView& view, const FeatureResources& res) {
  switch (view.kind) {
    case ViewKind::standard:
      return 4;
    case ViewKind::grammar:
      return 5;
    case ViewKind::lm_set:
      return 5 * selected_lms(view, res).size();
    case ViewKind::bow_concat:
    case ViewKind::tfidf_concat:
      return 2 * res.vocabulary.size();
    case ViewKind::embedding_sequence: {
      const std::size_t d = view.source == EmbeddingSource::static_table ? static_table(view, res).dim()
                                                                          : contextual_store(view, res).dim();
      return d + (view.marker ? 1 : 0);
    }
  }
  return 0;
}

NetInput extract(const FeatureView& view, const corpus::LabeledExchange& ex, const FeatureResources& res) {
  const auto response = corpus::tokenize(ex.response);
  switch (view.kind) {
    case ViewKind::standard:
      return standard_features(response, res.vocabulary, res.content);
    case ViewKind::grammar:
      return grammar_features(response, res.grammar.entries(corpus::prompt_key(ex.prompt)));
    case ViewKind::lm_set:
      return lm_feature_block(response, selected_lms(view, res));
    case ViewKind::bow_concat:
      return concat_prompt_response(bow_vector(corpus::tokenize(ex.prompt), res.vocabulary),
                                    bow_vector(response, res.vocabulary));
    case ViewKind::tfidf_concat:
      return concat_prompt_response(tfidf_vector(corpus::tokenize(ex.prompt), res.vocabulary, res.idf),
                                    tfidf_vector(response, res.vocabulary, res.idf));
    case ViewKind::embedding_sequence: {
      const auto prompt = corpus::tokenize(ex.prompt);
      if (view.source == EmbeddingSource::static_table) {
        return embed::embed_sequence(prompt, response, static_table(view, res), view.marker);
      }
      return embed::embed_sequence(ex.id, prompt, response, contextual_store(view, res), view.marker);
    }
  }
  throw ValidationError("unhandled view kind");
}

}  // namespace l2grade::features
