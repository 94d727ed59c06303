#include "l2grade/combine.hpp"

#include <cmath>

namespace l2grade::combine {

using corpus::ClassLabel;
using nlohmann::json;

void Expert::validate(const features::FeatureResources& res) const {
  network.spec().validate_expert();
  if (network.spec().recurrent != view.is_sequence()) {
    throw ValidationError("expert '" + id + "': recurrent=" + (network.spec().recurrent ? "true" : "false") +
                          " does not fit view kind " + features::to_string(view.kind));
  }
  const auto width = features::view_width(view, res);
  if (width != network.spec().input_width()) {
    throw ValidationError("expert '" + id + "': network input width " + std::to_string(network.spec().input_width()) +
                          " != view width " + std::to_string(width));
  }
}

Posterior expert_posterior(const Expert& expert, const corpus::LabeledExchange& ex,
                           const features::FeatureResources& res) {
  const auto out = expert.network.forward(features::extract(expert.view, ex, res));
  if (out.size() != ClassLabel::kCount) throw ValidationError("expert '" + expert.id + "' is not 4-way");
  Posterior p;
  std::copy(out.begin(), out.end(), p.begin());
  return p;
}

ClassLabel decide(std::span<const double> scores) {
  return ClassLabel::from_index(static_cast<int>(nn::argmax(scores)));
}

void ClassPriors::validate() const {
  double sum = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) throw ValidationError("class priors must be positive");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class priors must sum to 1");
}

ClassPriors estimate_priors(const corpus::Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("cannot estimate priors from an empty dataset");
  Posterior counts{1.0, 1.0, 1.0, 1.0};
  for (const auto& ex : dataset) counts[static_cast<std::size_t>(ex.label().index())] += 1.0;
  const double total = static_cast<double>(dataset.size()) + ClassLabel::kCount;
  ClassPriors priors;
  for (std::size_t i = 0; i < counts.size(); ++i) priors.p[i] = counts[i] / total;
  return priors;
}

PseudoJointResult pseudo_joint(std::span<const Posterior> posteriors, const ClassPriors& priors) {
  if (posteriors.empty()) throw ValidationError("pseudo-joint combination needs at least one expert");
  for (double v : priors.p) {
    if (!(v > 0.0)) throw ValidationError("pseudo-joint combination needs positive class priors");
  }
  const double k = static_cast<double>(posteriors.size());
  PseudoJointResult r;
  for (std::size_t i = 0; i < ClassLabel::kCount; ++i) {
    double s = 0.0;
    for (const auto& p : posteriors) s += std::log(std::max(p[i], nn::kLogClamp));
    r.log_scores[i] = s - (k - 1.0) * std::log(priors.p[i]);
  }
  r.decision = decide(r.log_scores);
  return r;
}

PseudoJointCombiner::PseudoJointCombiner(std::vector<Expert> experts, ClassPriors priors)
    : experts_(std::move(experts)), priors_(priors) {
  if (experts_.empty()) throw ValidationError("pseudo-joint combiner needs at least one expert");
  priors_.validate();
}

PseudoJointResult PseudoJointCombiner::evaluate(const corpus::LabeledExchange& ex,
                                                const features::FeatureResources& res) const {
  std::vector<Posterior> ps;
  ps.reserve(experts_.size());
  for (const auto& e : experts_) ps.push_back(expert_posterior(e, ex, res));
  return pseudo_joint(ps, priors_);
}

// --- gated mixture --------------------------------------------------------------------

std::vector<double> gating_input(std::span<const Posterior> posteriors) {
  std::vector<double> y;
  y.reserve(posteriors.size() * ClassLabel::kCount);
  for (const auto& p : posteriors) y.insert(y.end(), p.begin(), p.end());
  return y;
}

namespace {

Posterior mix(std::span<const double> credits, std::span<const double> y) {
  Posterior z{};
  for (std::size_t j = 0; j < credits.size(); ++j) {
    for (std::size_t c = 0; c < ClassLabel::kCount; ++c) z[c] += credits[j] * y[j * ClassLabel::kCount + c];
  }
  return z;
}

}  // namespace

MixtureOutput gate(const nn::Network& gating, std::span<const Posterior> posteriors) {
  if (gating.spec().output_width() != posteriors.size() ||
      gating.spec().input_width() != ClassLabel::kCount * posteriors.size()) {
    throw ValidationError("gating network shape does not match " + std::to_string(posteriors.size()) + " experts");
  }
  const auto y = gating_input(posteriors);
  MixtureOutput out;
  out.credits = gating.forward(y);
  out.z = mix(out.credits, y);
  out.decision = decide(out.z);
  return out;
}

nn::Objective mixture_objective(std::size_t experts, const nn::LossSpec& loss) {
  loss.validate();
  return [experts, loss](const nn::Sample& s, std::span<const double> credits, std::span<double> d_credits) {
    const auto& y = std::get<DenseInput>(s.input);
    const Posterior z = mix(credits, y);
    if (d_credits.empty()) return nn::loss(loss, s.gold, z);
    Posterior dz{};
    const double value = nn::loss_and_gradient(loss, s.gold, z, dz);
    for (std::size_t j = 0; j < experts; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < ClassLabel::kCount; ++c) acc += dz[c] * y[j * ClassLabel::kCount + c];
      d_credits[j] = acc;
    }
    return value;
  };
}

nn::LayerSpec gating_spec(std::size_t experts, const std::vector<std::size_t>& hidden) {
  if (experts < 1) throw ValidationError("a mixture needs at least one expert");
  nn::LayerSpec spec;
  spec.widths.push_back(ClassLabel::kCount * experts);
  spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
  spec.widths.push_back(experts);
  spec.validate();
  return spec;
}

namespace {

std::vector<nn::Sample> gating_samples(const std::vector<std::vector<Posterior>>& posteriors,
                                       const corpus::Dataset& gold) {
  if (posteriors.size() != gold.size()) throw ValidationError("posterior rows do not match the gold labels");
  std::vector<nn::Sample> samples;
  samples.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) samples.push_back({gating_input(posteriors[i]), gold[i].label()});
  return samples;
}

}  // namespace

nn::TrainResult train_gating_network(nn::Network gating, const std::vector<std::vector<Posterior>>& train_posteriors,
                                     const corpus::Dataset& train_gold,
                                     const std::vector<std::vector<Posterior>>& validation_posteriors,
                                     const corpus::Dataset& validation_gold, const nn::TrainConfig& config,
                                     const nn::LossSpec& loss) {
  const std::size_t k = gating.spec().output_width();
  return nn::train_with_objective(std::move(gating), gating_samples(train_posteriors, train_gold),
                                  gating_samples(validation_posteriors, validation_gold), mixture_objective(k, loss),
                                  config);
}

GatedMixture::GatedMixture(std::vector<Expert> experts, nn::Network gating)
    : experts_(std::move(experts)), gating_(std::move(gating)) {
  if (experts_.empty()) throw ValidationError("a mixture needs at least one expert");
  const auto& spec = gating_.spec();
  if (spec.recurrent || spec.input_width() != ClassLabel::kCount * experts_.size() ||
      spec.output_width() != experts_.size()) {
    throw ValidationError("gating network must map " + std::to_string(ClassLabel::kCount * experts_.size()) +
                          " inputs to " + std::to_string(experts_.size()) + " credits");
  }
}

std::vector<Posterior> GatedMixture::expert_posteriors(const corpus::LabeledExchange& ex,
                                                       const features::FeatureResources& res) const {
  std::vector<Posterior> ps;
  ps.reserve(experts_.size());
  for (const auto& e : experts_) ps.push_back(expert_posterior(e, ex, res));
  return ps;
}

MixtureOutput GatedMixture::forward(const corpus::LabeledExchange& ex, const features::FeatureResources& res) const {
  return gate(gating_, expert_posteriors(ex, res));
}

nn::TrainHistory train_gating(GatedMixture& mixture, const corpus::Dataset& train_set,
                              const corpus::Dataset& validation_set, const features::FeatureResources& res,
                              const nn::TrainConfig& config, double lambda) {
  auto posteriors = [&](const corpus::Dataset& data) {
    std::vector<std::vector<Posterior>> rows;
    rows.reserve(data.size());
    for (const auto& ex : data) rows.push_back(mixture.expert_posteriors(ex, res));
    return rows;
  };
  nn::LossSpec loss{nn::LossKind::penalized, lambda};
  if (lambda == 1.0) loss.kind = nn::LossKind::mse;
  auto result = train_gating_network(mixture.gating(), posteriors(train_set), train_set, posteriors(validation_set),
                                     validation_set, config, loss);
  mixture.gating() = std::move(result.network);
  return result.history;
}

metrics::Decision majority_vote(const std::vector<metrics::Decision>& decisions) {
  if (decisions.empty()) throw ValidationError("majority vote over no decisions");
  std::size_t accepts = 0;
  for (auto d : decisions) accepts += d == metrics::Decision::accept ? 1 : 0;
  return 2 * accepts > decisions.size() ? metrics::Decision::accept : metrics::Decision::reject;
}

json CombinerManifest::to_json() const {
  json j = {{"format", "l2grade-combiner"},
            {"version", 1},
            {"kind", kind},
            {"experts", json::array()}};
  for (std::size_t i = 0; i < expert_ids.size(); ++i) {
    j["experts"].push_back({{"id", expert_ids[i]}, {"path", expert_paths.at(i)}});
  }
  if (!gating_path.empty()) j["gating"] = gating_path;
  if (priors) j["priors"] = priors->p;
  return j;
}

CombinerManifest CombinerManifest::from_json(const json& j) {
  if (j.value("format", "") != "l2grade-combiner" || j.value("version", 0) != 1) {
    throw ParseError("not an l2grade-combiner v1 manifest");
  }
  CombinerManifest m;
  m.kind = j.at("kind").get<std::string>();
  for (const auto& e : j.at("experts")) {
    m.expert_ids.push_back(e.at("id").get<std::string>());
    m.expert_paths.push_back(e.at("path").get<std::string>());
  }
  m.gating_path = j.value("gating", std::string());
  if (j.contains("priors")) {
    ClassPriors p;
    p.p = j.at("priors").get<Posterior>();
    p.validate();
    m.priors = p;
  }
  return m;
}

}  // namespace l2grade::combine
