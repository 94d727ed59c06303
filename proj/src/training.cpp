#include "l2grade/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace l2grade::nn {

using nlohmann::json;

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "rmsprop"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ValidationError("unknown optimizer: " + name);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be a finite value >= 0");
  }
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
}

json TrainConfig::to_json() const {
  return {{"optimizer", to_string(optimizer)}, {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"max_epochs", max_epochs},          {"patience", patience},           {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

json TrainHistory::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
  }
  return {{"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"best_validation_loss", best_validation_loss},
          {"stopped_early", stopped_early}};
}

Objective loss_objective(const LossSpec& spec) {
  spec.validate();
  return [spec](const Sample& s, std::span<const double> out, std::span<double> d_out) {
    if (d_out.empty()) return loss(spec, s.gold, out);
    return loss_and_gradient(spec, s.gold, out, d_out);
  };
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::size_t parameter_count)
    : kind_(kind), lr_(learning_rate), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  if (kind_ == OptimizerKind::adam) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  } else {
    constexpr double rho = 0.9, eps = 1e-7;
    for (std::size_t i = 0; i < params.size(); ++i) {
      v_[i] = rho * v_[i] + (1.0 - rho) * grad[i] * grad[i];
      params[i] -= lr_ * grad[i] / (std::sqrt(v_[i]) + eps);
    }
  }
}

double mean_loss(const Network& net, const std::vector<Sample>& samples, const Objective& objective) {
  if (samples.empty()) throw ValidationError("mean loss over an empty sample set");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto out = net.forward(s.input);
    total += objective(s, out, {});
  }
  return total / static_cast<double>(samples.size());
}

double batch_gradient(const Network& net, const std::vector<Sample>& samples, std::span<const std::size_t> batch,
                      const Objective& objective, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  ForwardCache cache;
  std::vector<double> d_out(net.spec().output_width());
  double total = 0.0;
  for (auto idx : batch) {
    const auto& s = samples[idx];
    net.forward(s.input, cache);
    total += objective(s, cache.output(), d_out);
    net.backward(s.input, cache, d_out, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return total * inv;
}

TrainResult train(Network net, const std::vector<Sample>& train_set, const std::vector<Sample>& validation_set,
                  const LossSpec& loss, const TrainConfig& config) {
  return train_with_objective(std::move(net), train_set, validation_set, loss_objective(loss), config);
}

TrainResult train_with_objective(Network net, const std::vector<Sample>& train_set,
                                 const std::vector<Sample>& validation_set, const Objective& objective,
                                 const TrainConfig& config) {
  config.validate();
  if (train_set.empty() || validation_set.empty()) throw ValidationError("training needs non-empty splits");

  Rng rng(config.seed);
  Optimizer optimizer(config.optimizer, config.learning_rate, net.parameter_count());
  std::vector<double> grad(net.parameter_count());
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainHistory history;
  std::vector<double> best_params(net.params().begin(), net.params().end());
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> batch(order.data() + start, n);
      const double l = batch_gradient(net, train_set, batch, objective, grad);
      if (!std::isfinite(l)) throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      check_finite_gradient(net, grad);
      train_total += l * static_cast<double>(n);
      optimizer.step(net.params(), grad);
    }
    const double val = mean_loss(net, validation_set, objective);
    if (!std::isfinite(val)) {
      throw Error("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    history.epochs.push_back({epoch, train_total / static_cast<double>(train_set.size()), val});
    if (val < best) {
      best = val;
      history.best_epoch = epoch;
      std::copy(net.params().begin(), net.params().end(), best_params.begin());
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }

  history.best_validation_loss = best;
  std::copy(best_params.begin(), best_params.end(), net.params().begin());
  return {std::move(net), std::move(history)};
}

double gradient_check(const Network& net, const std::vector<Sample>& samples, const Objective& objective) {
  constexpr double eps = 1e-5;
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<double> analytic(net.parameter_count());
  batch_gradient(net, samples, all, objective, analytic);

  Network probe = net;
  auto params = probe.params();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = mean_loss(probe, samples, objective);
    params[i] = saved - eps;
    const double down = mean_loss(probe, samples, objective);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

double gradient_check(const Network& net, const Sample& sample, const LossSpec& loss) {
  return gradient_check(net, std::vector<Sample>{sample}, loss_objective(loss));
}

}  // namespace l2grade::nn
