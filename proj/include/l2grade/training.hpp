#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/corpus.hpp"
#include "l2grade/loss.hpp"
#include "l2grade/network.hpp"

namespace l2grade::nn {

enum class OptimizerKind { adam, rmsprop };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 1;

  /// learning_rate >= 0 (0 freezes the parameters), batch_size >= 1,
  /// max_epochs >= 1, patience >= 1.
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Sample {
  NetInput input;
  corpus::ClassLabel gold;
};

/// Per-sample objective on the network output. Returns the loss and, when
/// `d_output` is non-empty, writes dL/doutput into it.
using Objective =
    std::function<double(const Sample& sample, std::span<const double> output, std::span<double> d_output)>;

Objective loss_objective(const LossSpec& spec);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  bool stopped_early = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Network network;
  TrainHistory history;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::size_t parameter_count);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

/// Mean objective over `samples`.
double mean_loss(const Network& net, const std::vector<Sample>& samples, const Objective& objective);

/// Mean objective and its gradient over a batch (indices into `samples`).
double batch_gradient(const Network& net, const std::vector<Sample>& samples, std::span<const std::size_t> batch,
                      const Objective& objective, std::span<double> grad);

/// Mini-batch training with early stopping on validation loss; returns the
/// best-validation snapshot.
TrainResult train(Network net, const std::vector<Sample>& train_set, const std::vector<Sample>& validation_set,
                  const LossSpec& loss, const TrainConfig& config);
TrainResult train_with_objective(Network net, const std::vector<Sample>& train_set,
                                 const std::vector<Sample>& validation_set, const Objective& objective,
                                 const TrainConfig& config);

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// numeric by central differences with step 1e-5, on the mean objective over `samples`.
double gradient_check(const Network& net, const std::vector<Sample>& samples, const Objective& objective);
double gradient_check(const Network& net, const Sample& sample, const LossSpec& loss);

}  // namespace l2grade::nn
