#pragma once

#include <span>
#include <string>

#include "json.hpp"
#include "l2grade/corpus.hpp"

namespace l2grade::nn {

enum class LossKind { cross_entropy, mse, penalized };

/// When the penalized loss multiplies MSE by lambda.
enum class PenaltyCondition {
  /// Gold meaning incorrect and the prediction accepts: a gross false accept.
  gross_false_accept,
  /// Gold language correct and the predicted class has incorrect meaning.
  displayed_case,
};

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  double lambda = 3.0;
  PenaltyCondition condition = PenaltyCondition::gross_false_accept;

  /// lambda > 1 for the penalized kind.
  void validate() const;

  nlohmann::json to_json() const;
  static LossSpec from_json(const nlohmann::json& j);
};

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

inline constexpr double kLogClamp = 1e-12;

/// Mean over the 4 classes of (predicted - one_hot(gold))^2.
double mse(corpus::ClassLabel gold, std::span<const double> predicted);

bool penalty_applies(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted);

double loss(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted);

/// Loss value; writes dL/dpredicted into `d_predicted`. The penalty branch
/// depends on argmax(predicted), which is locally constant, so it scales
/// the MSE gradient.
double loss_and_gradient(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted,
                         std::span<double> d_predicted);

}  // namespace l2grade::nn
