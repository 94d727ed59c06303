#include "l2grade/loss.hpp"

#include <algorithm>
#include <cmath>

#include "l2grade/network.hpp"

namespace l2grade::nn {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy:
      return "cross-entropy";
    case LossKind::mse:
      return "mse";
    case LossKind::penalized:
      return "penalized";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "cross-entropy" || name == "categorical-cross-entropy") return LossKind::cross_entropy;
  if (name == "mse") return LossKind::mse;
  if (name == "penalized") return LossKind::penalized;
  throw ValidationError("unknown loss kind: " + name);
}

void LossSpec::validate() const {
  if (kind == LossKind::penalized && !(lambda > 1.0)) {
    throw ValidationError("penalized loss needs lambda > 1");
  }
}

nlohmann::json LossSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}};
  if (kind == LossKind::penalized) {
    j["lambda"] = lambda;
    j["condition"] = condition == PenaltyCondition::gross_false_accept ? "gross-false-accept" : "displayed-case";
  }
  return j;
}

LossSpec LossSpec::from_json(const nlohmann::json& j) {
  LossSpec s;
  s.kind = parse_loss_kind(j.value("kind", std::string("cross-entropy")));
  s.lambda = j.value("lambda", 3.0);
  const auto cond = j.value("condition", std::string("gross-false-accept"));
  if (cond == "gross-false-accept") {
    s.condition = PenaltyCondition::gross_false_accept;
  } else if (cond == "displayed-case") {
    s.condition = PenaltyCondition::displayed_case;
  } else {
    throw ValidationError("unknown penalty condition: " + cond);
  }
  s.validate();
  return s;
}

double mse(corpus::ClassLabel gold, std::span<const double> predicted) {
  double sum = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double diff = predicted[k] - (static_cast<int>(k) == gold.index() ? 1.0 : 0.0);
    sum += diff * diff;
  }
  return sum / static_cast<double>(predicted.size());
}

bool penalty_applies(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted) {
  if (spec.kind != LossKind::penalized) return false;
  const auto predicted_class = corpus::ClassLabel::from_index(static_cast<int>(argmax(predicted)));
  if (spec.condition == PenaltyCondition::gross_false_accept) {
    return !gold.meaning_correct() && predicted_class.accept();
  }
  return gold.language_correct() && !predicted_class.meaning_correct();
}

double loss(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted) {
  switch (spec.kind) {
    case LossKind::cross_entropy:
      return -std::log(std::max(predicted[static_cast<std::size_t>(gold.index())], kLogClamp));
    case LossKind::mse:
      return mse(gold, predicted);
    case LossKind::penalized:
      return (penalty_applies(spec, gold, predicted) ? spec.lambda : 1.0) * mse(gold, predicted);
  }
  return 0.0;
}

double loss_and_gradient(const LossSpec& spec, corpus::ClassLabel gold, std::span<const double> predicted,
                         std::span<double> d_predicted) {
  std::fill(d_predicted.begin(), d_predicted.end(), 0.0);
  const auto g = static_cast<std::size_t>(gold.index());
  if (spec.kind == LossKind::cross_entropy) {
    const double p = predicted[g];
    if (p > kLogClamp) d_predicted[g] = -1.0 / p;
    return -std::log(std::max(p, kLogClamp));
  }
  const double scale = penalty_applies(spec, gold, predicted) ? spec.lambda : 1.0;
  const double n = static_cast<double>(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    d_predicted[k] = scale * 2.0 * (predicted[k] - (k == g ? 1.0 : 0.0)) / n;
  }
  return scale * mse(gold, predicted);
}

}  // namespace l2grade::nn
