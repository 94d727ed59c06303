#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/corpus.hpp"
#include "l2grade/loss.hpp"
#include "l2grade/metrics.hpp"
#include "l2grade/network.hpp"
#include "l2grade/training.hpp"
#include "l2grade/views.hpp"

namespace l2grade::combine {

using Posterior = std::array<double, corpus::ClassLabel::kCount>;

/// A trained network bound to the feature view it consumes.
struct Expert {
  std::string id;
  features::FeatureView view;
  nn::Network network;
  nlohmann::json metadata;

  /// 4-way output and an input width matching the view.
  void validate(const features::FeatureResources& res) const;
};

Posterior expert_posterior(const Expert& expert, const corpus::LabeledExchange& ex,
                           const features::FeatureResources& res);

/// Lowest index wins ties.
corpus::ClassLabel decide(std::span<const double> scores);

struct ClassPriors {
  Posterior p{0.25, 0.25, 0.25, 0.25};
  void validate() const;
};

/// Relative class frequencies with add-one smoothing.
ClassPriors estimate_priors(const corpus::Dataset& dataset);

struct PseudoJointResult {
  Posterior log_scores;  // log g_i
  corpus::ClassLabel decision{true, true};
};

/// log g_i = sum_j log max(P_j(i), 1e-12) - (k-1) log prior_i.
PseudoJointResult pseudo_joint(std::span<const Posterior> posteriors, const ClassPriors& priors);

class PseudoJointCombiner {
 public:
  PseudoJointCombiner(std::vector<Expert> experts, ClassPriors priors);

  PseudoJointResult evaluate(const corpus::LabeledExchange& ex, const features::FeatureResources& res) const;
  const std::vector<Expert>& experts() const { return experts_; }
  const ClassPriors& priors() const { return priors_; }

 private:
  std::vector<Expert> experts_;
  ClassPriors priors_;
};

struct MixtureOutput {
  std::vector<double> credits;  // alpha, softmax over experts
  Posterior z{};
  corpus::ClassLabel decision{true, true};
};

/// Concatenated expert posteriors, the gating network's input.
std::vector<double> gating_input(std::span<const Posterior> posteriors);

/// z = sum_j alpha_j(y) * posterior_j with alpha from the gating network.
MixtureOutput gate(const nn::Network& gating, std::span<const Posterior> posteriors);

/// Penalized loss on z; the sample input is the concatenated posteriors.
nn::Objective mixture_objective(std::size_t experts, const nn::LossSpec& loss);

/// Gating spec: 4k inputs, the given hidden widths, k softmax outputs.
nn::LayerSpec gating_spec(std::size_t experts, const std::vector<std::size_t>& hidden);

/// Trains a gating network on precomputed expert posteriors.
nn::TrainResult train_gating_network(nn::Network gating, const std::vector<std::vector<Posterior>>& train_posteriors,
                                     const corpus::Dataset& train_gold,
                                     const std::vector<std::vector<Posterior>>& validation_posteriors,
                                     const corpus::Dataset& validation_gold, const nn::TrainConfig& config,
                                     const nn::LossSpec& loss);

class GatedMixture {
 public:
  GatedMixture(std::vector<Expert> experts, nn::Network gating);

  std::size_t size() const { return experts_.size(); }
  const std::vector<Expert>& experts() const { return experts_; }
  const nn::Network& gating() const { return gating_; }
  nn::Network& gating() { return gating_; }

  std::vector<Posterior> expert_posteriors(const corpus::LabeledExchange& ex,
                                           const features::FeatureResources& res) const;
  MixtureOutput forward(const corpus::LabeledExchange& ex, const features::FeatureResources& res) const;

 private:
  std::vector<Expert> experts_;
  nn::Network gating_;
};

/// Trains only the gating network (experts stay frozen) with the penalized
/// loss applied to z; returns the training history.
nn::TrainHistory train_gating(GatedMixture& mixture, const corpus::Dataset& train_set,
                              const corpus::Dataset& validation_set, const features::FeatureResources& res,
                              const nn::TrainConfig& config, double lambda = 3.0);

/// Strict majority accepts; ties reject.
metrics::Decision majority_vote(const std::vector<metrics::Decision>& decisions);

/// References expert and gating network files by path.
struct CombinerManifest {
  std::string kind;  // "pseudo-joint" | "mixture" | "majority"
  std::vector<std::string> expert_ids;
  std::vector<std::string> expert_paths;
  std::string gating_path;
  std::optional<ClassPriors> priors;

  nlohmann::json to_json() const;
  static CombinerManifest from_json(const nlohmann::json& j);
};

}  // namespace l2grade::combine
