#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/combine.hpp"
#include "l2grade/corpus.hpp"
#include "l2grade/embeddings.hpp"
#include "l2grade/metrics.hpp"
#include "l2grade/ngram.hpp"
#include "l2grade/training.hpp"
#include "l2grade/views.hpp"

namespace l2grade::experiment {

/// Failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("stage " + stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
  std::optional<corpus::SynthesisConfig> synthesis;
  std::string dataset_path;     // split into train / validation (and test unless test_path is set)
  std::string validation_path;  // optional explicit validation rows
  std::string test_path;        // optional explicit test rows
  std::string grammar_path;
  double test_fraction = 0.2;   // of the whole corpus, when no test file is given
  double train_fraction = 0.8;  // of the remainder; the rest is validation
};

struct LmDecl {
  int order = 3;
  lm::CorpusRole role = lm::CorpusRole::train_accepted;
  bool boundary = true;
};

struct EmbeddingDecl {
  enum class Source { none, skipgram, file };
  Source source = Source::none;
  embed::SkipGramConfig skipgram;
  std::string path;
};

struct ResourceConfig {
  int min_count = 1;
  std::vector<LmDecl> language_models;
  std::string generic_corpus;  // one text per line; training responses when empty
  EmbeddingDecl embeddings;
  std::string contextual_path;
  std::optional<std::vector<std::string>> stopwords;
};

struct ExpertDecl {
  std::string id;
  std::string view;
  std::string architecture;          // named table architecture, or empty
  std::vector<std::size_t> hidden;   // custom hidden widths when no architecture is named
  nn::Activation activation = nn::Activation::tanh;
  nn::LossSpec loss;
  nn::TrainConfig train;
  std::uint64_t init_seed = 0;
};

struct CombinerDecl {
  std::string name;
  std::string kind;                  // pseudo-joint | mixture | majority
  std::vector<std::string> experts;  // empty: every expert
  std::vector<std::size_t> gating_hidden;
  nn::TrainConfig train;
  double lambda = 3.0;
  std::uint64_t init_seed = 0;
  // Rows the gating network is fitted on. "validation" fits it on expert
  // outputs for rows the experts never saw, holding back part of the
  // validation split for early stopping; "train" reuses the training split.
  std::string fit_on = "validation";
  double fit_fraction = 0.75;
  std::uint64_t fit_split_seed = 0;
};

/// Combiner declaration as it appears in a config; seeds not given are
/// derived from `global_seed`.
CombinerDecl parse_combiner(const nlohmann::json& j, std::uint64_t global_seed);

struct GridSpec {
  std::string expert;  // empty: the first expert
  std::vector<double> learning_rates;
  std::vector<double> lambdas;  // 1 trains with plain MSE
  std::vector<std::vector<std::size_t>> hidden;
  std::vector<nn::OptimizerKind> optimizers;
  std::size_t cap = 64;

  /// Product of the non-empty candidate list sizes.
  std::size_t combinations() const;
  void validate() const;

  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  DataConfig data;
  ResourceConfig resources;
  std::vector<features::FeatureView> views;
  std::vector<ExpertDecl> experts;
  std::vector<CombinerDecl> combiners;
  metrics::Target selection_target = metrics::Target::d_full;
  std::string out;
  std::optional<GridSpec> grid;
  // Split and skip-gram seeds; derived from `seed` unless given.
  std::uint64_t test_split_seed = 0;
  std::uint64_t validation_split_seed = 0;

  /// Every expert references a declared view, ids are unique, combiners
  /// reference declared experts, and at least one expert exists.
  void validate() const;

  const features::FeatureView& view(const std::string& name) const;
  const ExpertDecl& expert(const std::string& id) const;

  nlohmann::json to_json() const;
  /// Seeds not given explicitly are derived from the global seed here, so
  /// to_json() records every seed the run will use. With `check` false the
  /// cross-references are left unvalidated (data-only configs).
  static ExperimentConfig from_json(const nlohmann::json& j, bool check = true);
  static ExperimentConfig load(const std::string& path);
};

struct DataSplits {
  corpus::Dataset train;
  corpus::Dataset validation;
  corpus::Dataset test;
  corpus::ReferenceGrammar grammar;
};

/// The config as saved in a workspace: without `out`, so a workspace does
/// not depend on where it was written.
nlohmann::json workspace_config_json(const ExperimentConfig& config);

DataSplits prepare_data(const ExperimentConfig& config);

/// Fits vocabulary, idf, language models and embeddings on `splits.train`
/// only; the other splits are never read.
features::FeatureResources fit_resources(const ExperimentConfig& config, const DataSplits& splits);

std::vector<lm::NGramModel> fit_language_models(const ExperimentConfig& config, const corpus::Dataset& train);
std::optional<embed::EmbeddingTable> fit_embeddings(const ExperimentConfig& config, const corpus::Dataset& train);

struct TrainedExpert {
  combine::Expert expert;
  nn::TrainHistory history;
  metrics::MetricsReport validation;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
};

nn::LayerSpec expert_spec(const ExpertDecl& decl, const features::FeatureView& view,
                          const features::FeatureResources& res);

TrainedExpert train_expert(const ExperimentConfig& config, const ExpertDecl& decl, const DataSplits& splits,
                           const features::FeatureResources& res);

std::vector<metrics::Decision> expert_decisions(const combine::Expert& expert, const corpus::Dataset& data,
                                                const features::FeatureResources& res);
metrics::MetricsReport evaluate_expert(const combine::Expert& expert, const corpus::Dataset& data,
                                       const features::FeatureResources& res);

struct CombinerResult {
  std::string name;
  std::string kind;
  std::vector<std::string> expert_ids;
  std::optional<combine::ClassPriors> priors;
  std::optional<nn::Network> gating;
  std::optional<nn::TrainHistory> history;
  metrics::MetricsReport validation;
  metrics::MetricsReport test;
};

/// Builds (and for a mixture, trains) the combiner over the named experts,
/// then scores it on the validation and test splits.
CombinerResult build_combiner(const ExperimentConfig& config, const CombinerDecl& decl,
                              const std::vector<combine::Expert>& experts, const DataSplits& splits,
                              const features::FeatureResources& res);

struct ExperimentResult {
  std::vector<TrainedExpert> experts;
  std::vector<metrics::MetricsReport> expert_test;
  std::vector<CombinerResult> combiners;
  nlohmann::json report;
};

/// Full pipeline; writes the workspace under config.out when it is non-empty.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Plain-text table of the test metrics in a report.
std::string report_text(const nlohmann::json& report);

// --- workspace persistence -----------------------------------------------------------

/// Layout: config.json, data/{train,validation,test}.tsv, grammar.tsv,
/// resources/, experts/<id>.json + <id>.meta.json, combiners/, report.json,
/// report.txt, manifest.json.
void save_resources(const features::FeatureResources& res, const std::string& dir);
features::FeatureResources load_resources(const std::string& dir);

void save_expert(const TrainedExpert& trained, const ExpertDecl& decl, const std::string& dir);
combine::Expert load_expert(const std::string& network_path);

/// Writes <name>.json (and <name>.gating.json for a mixture) under
/// `dir`, referencing the expert files in `experts_dir` by relative path.
void save_combiner(const CombinerResult& result, const std::string& dir, const std::string& experts_dir);

/// The splits and grammar a workspace was trained on.
DataSplits load_workspace_data(const std::string& workspace);
/// Experts saved in a workspace; every expert when `ids` is empty, by id.
std::vector<combine::Expert> load_workspace_experts(const std::string& workspace,
                                                    const std::vector<std::string>& ids = {});

/// Writes manifest.json listing every other file under `dir` with its
/// FNV-1a hash, plus the given seeds.
void write_manifest(const std::string& dir, const nlohmann::json& seeds);

// --- grid search ----------------------------------------------------------------------

struct LeaderboardRow {
  std::string config_id;
  std::size_t parameters = 0;
  nlohmann::json hyperparameters;
  metrics::MetricsReport validation;
};

struct Leaderboard {
  metrics::Target target = metrics::Target::d_full;
  std::vector<LeaderboardRow> rows;            // best first
  std::map<std::string, std::string> best_by;  // metric name -> config id

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Strict total order: higher selection key, then fewer parameters, then
/// the lexicographically smaller config id.
bool ranks_before(const LeaderboardRow& a, const LeaderboardRow& b, metrics::Target target);

/// Trains every combination for the grid's expert on the training split and
/// ranks them on the validation split. Throws before any training when the
/// grid exceeds its cap.
Leaderboard grid_search(const ExperimentConfig& config, const GridSpec& grid);

std::string format_real(double v);

}  // namespace l2grade::experiment
