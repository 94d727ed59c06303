#include <cmath>
#include <limits>

#include "doctest.h"
#include "l2grade/loss.hpp"
#include "l2grade/network.hpp"
#include "l2grade/training.hpp"
#include "test_util.hpp"

using namespace l2grade;
using namespace l2grade::nn;
using corpus::ClassLabel;

namespace {

DenseInput random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  DenseInput v(n);
  for (double& x : v) x = uniform(rng, -scale, scale);
  return v;
}

Sequence random_sequence(Rng& rng, std::size_t dim, std::size_t steps) {
  Sequence s(dim);
  for (std::size_t t = 0; t < steps; ++t) s.push(random_vector(rng, dim));
  return s;
}

}  // namespace

TEST_CASE("table architectures") {
  CHECK(build_architecture("LSTM-W2V") == LayerSpec{{300, 300, 4}, true});
  CHECK(build_architecture("LSTM-W2V-L") == LayerSpec{{300, 175, 4}, true});
  CHECK(build_architecture("LSTM-W2V-M") == LayerSpec{{301, 75, 25, 25, 20, 4}, true});
  CHECK(build_architecture("FFN-BOW-WC") == LayerSpec{{2040, 150, 150, 150, 170, 15, 4}, false});
  CHECK(build_architecture("FFN-BOW-TFIDF") == LayerSpec{{2040, 210, 130, 150, 170, 15, 4}, false});
  CHECK(build_architecture("LSTM-BERT") == LayerSpec{{769, 100, 100, 20, 20, 4}, true});
  CHECK(architecture_names().size() == 6);
  CHECK_THROWS_AS(build_architecture("CNN"), ValidationError);
}

TEST_CASE("layer spec validation") {
  CHECK_THROWS_AS(Network(LayerSpec{{4}}), ValidationError);
  CHECK_THROWS_AS(Network(LayerSpec{{4, 4}, true}), ValidationError);
  CHECK_THROWS_AS(Network(LayerSpec{{4, 0, 4}}), ValidationError);
  CHECK_THROWS_AS((LayerSpec{{4, 3}}).validate_expert(), ValidationError);
  CHECK_NOTHROW((LayerSpec{{4, 4}}).validate_expert());
}

TEST_CASE("parameter layout") {
  const Network lstm(LayerSpec{{3, 5, 2, 4}, true});
  // 4H*D + 4H*H + 4H, then 2x5 + 2, then 4x2 + 4
  CHECK(lstm.parameter_count() == 60 + 100 + 20 + 12 + 12);
  CHECK(lstm.blocks().front().name == "lstm.W");
  CHECK(lstm.block_of(lstm.parameter_count() - 1).name == "dense1.b");
  const Network ffn(build_architecture("FFN-BOW-WC"));
  CHECK(ffn.parameter_count() == 2040 * 150 + 150 + 150 * 150 + 150 + 150 * 150 + 150 + 150 * 170 + 170 +
                                     170 * 15 + 15 + 15 * 4 + 4);
}

TEST_CASE("zero network is uniform") {
  const Network dense(LayerSpec{{3, 5, 4}});
  for (double p : dense.forward(DenseInput{1, -2, 3})) CHECK(p == 0.25);
  Rng rng(1);
  const Network rec(LayerSpec{{3, 5, 4}, true});
  for (double p : rec.forward(random_sequence(rng, 3, 4))) CHECK(p == 0.25);
}

TEST_CASE("hand-set 2-2-4 network matches straight-line propagation") {
  Network net(LayerSpec{{2, 2, 4}});
  const std::vector<double> w1{0.5, -0.3, 0.2, 0.8}, b1{0.1, -0.1};
  const std::vector<double> w2{1.0, -1.0, 0.5, 0.5, -0.7, 0.2, 0.3, 0.9}, b2{0.0, 0.1, -0.2, 0.05};
  std::vector<double> all;
  for (const auto* v : {&w1, &b1, &w2, &b2}) all.insert(all.end(), v->begin(), v->end());
  REQUIRE(all.size() == net.parameter_count());
  std::copy(all.begin(), all.end(), net.params().begin());

  const double x0 = 1.0, x1 = 0.0;
  const double h0 = std::tanh(0.5 * x0 - 0.3 * x1 + 0.1);
  const double h1 = std::tanh(0.2 * x0 + 0.8 * x1 - 0.1);
  const double z0 = 1.0 * h0 - 1.0 * h1 + 0.0;
  const double z1 = 0.5 * h0 + 0.5 * h1 + 0.1;
  const double z2 = -0.7 * h0 + 0.2 * h1 - 0.2;
  const double z3 = 0.3 * h0 + 0.9 * h1 + 0.05;
  const double s = std::exp(z0) + std::exp(z1) + std::exp(z2) + std::exp(z3);
  const std::vector<double> expected{std::exp(z0) / s, std::exp(z1) / s, std::exp(z2) / s, std::exp(z3) / s};

  const auto out = net.forward(DenseInput{x0, x1});
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(out[k] - expected[k]) < 1e-9);
}

TEST_CASE("hand-set single-unit LSTM matches straight-line propagation") {
  Network net(LayerSpec{{1, 1, 4}, true});
  // W, U, b each hold gates [i f g o]
  const std::vector<double> W{0.5, -0.4, 0.3, 0.8}, U{0.2, 0.1, -0.6, 0.4}, b{0.0, 1.0, 0.1, -0.2};
  const std::vector<double> Wd{1.0, -0.5, 0.25, 2.0}, bd{0.1, 0.0, -0.1, 0.2};
  std::vector<double> all;
  for (const auto* v : {&W, &U, &b, &Wd, &bd}) all.insert(all.end(), v->begin(), v->end());
  REQUIRE(all.size() == net.parameter_count());
  std::copy(all.begin(), all.end(), net.params().begin());

  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double h = 0.0, c = 0.0;
  for (double x : {1.0, -0.5, 2.0}) {
    const double i = sig(W[0] * x + U[0] * h + b[0]);
    const double f = sig(W[1] * x + U[1] * h + b[1]);
    const double g = std::tanh(W[2] * x + U[2] * h + b[2]);
    const double o = sig(W[3] * x + U[3] * h + b[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
  }
  std::vector<double> z(4);
  double s = 0.0;
  for (std::size_t k = 0; k < 4; ++k) s += std::exp(z[k] = Wd[k] * h + bd[k]);

  Sequence seq(1);
  for (double x : {1.0, -0.5, 2.0}) seq.push(std::vector<double>{x});
  const auto out = net.forward(seq);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(out[k] - std::exp(z[k]) / s) < 1e-12);
}

TEST_CASE("softmax outputs are valid posteriors") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto dense = Network::initialized(LayerSpec{{6, 8, 5, 4}}, derive_seed(11, trial));
    const auto rec = Network::initialized(LayerSpec{{3, 4, 4}, true}, derive_seed(12, trial));
    for (const auto& out : {dense.forward(random_vector(rng, 6, 5.0)), rec.forward(random_sequence(rng, 3, 5))}) {
      double sum = 0.0;
      for (double p : out) {
        CHECK(p > 0.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("input shape errors") {
  const Network dense(LayerSpec{{3, 4}});
  CHECK_THROWS_AS(dense.forward(DenseInput{1, 2}), ValidationError);
  CHECK_THROWS_AS(dense.forward(Sequence(3)), ValidationError);
  const Network rec(LayerSpec{{3, 2, 4}, true});
  CHECK_THROWS_AS(rec.forward(DenseInput{1, 2, 3}), ValidationError);
  Sequence wrong(2);
  wrong.push(std::vector<double>{1, 2});
  CHECK_THROWS_AS(rec.forward(wrong), ValidationError);
}

TEST_CASE("losses") {
  const ClassLabel cc(true, true), ii(false, false);
  const LossSpec ce{LossKind::cross_entropy}, ms{LossKind::mse}, pen{LossKind::penalized, 3.0};
  const std::vector<double> onehot{1, 0, 0, 0};
  CHECK(loss(ms, cc, onehot) == 0.0);
  CHECK(loss(pen, cc, onehot) == 0.0);

  const std::vector<double> p{0.7, 0.1, 0.1, 0.1};
  CHECK(loss(ms, ii, p) == doctest::Approx(0.33).epsilon(1e-12));
  CHECK(loss(pen, ii, p) == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(loss(pen, cc, p) == loss(ms, cc, p));

  const std::vector<double> uniform(4, 0.25);
  CHECK(loss(ce, cc, uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss(ce, cc, std::vector<double>{0, 1, 0, 0}) == doctest::Approx(-std::log(1e-12)));

  CHECK_THROWS_AS((LossSpec{LossKind::penalized, 1.0}).validate(), ValidationError);
  CHECK_THROWS_AS((LossSpec{LossKind::penalized, 0.5}).validate(), ValidationError);
  CHECK_NOTHROW((LossSpec{LossKind::mse, 1.0}).validate());
}

TEST_CASE("penalized loss bounds mse from above") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(4);
    double s = 0.0;
    for (double& v : p) s += (v = uniform01(rng) + 1e-6);
    for (double& v : p) v /= s;
    const auto gold = ClassLabel::from_index(static_cast<int>(uniform_index(rng, 4)));
    const double lambda = 1.0 + 4.0 * uniform01(rng) + 1e-6;
    for (auto cond : {PenaltyCondition::gross_false_accept, PenaltyCondition::displayed_case}) {
      const LossSpec spec{LossKind::penalized, lambda, cond};
      const double m = mse(gold, p);
      const double l = loss(spec, gold, p);
      CHECK(l >= m);
      CHECK((l == m) == (!penalty_applies(spec, gold, p) || m == 0.0));
      // at lambda = 1 both branches coincide
      CHECK(loss(LossSpec{LossKind::penalized, 1.0, cond}, gold, p) == m);
    }
  }
}

TEST_CASE("penalty conditions") {
  const std::vector<double> accept{0.7, 0.1, 0.1, 0.1}, meaning_wrong{0.1, 0.7, 0.1, 0.1};
  const LossSpec prose{LossKind::penalized, 3.0, PenaltyCondition::gross_false_accept};
  const LossSpec shown{LossKind::penalized, 3.0, PenaltyCondition::displayed_case};
  CHECK(penalty_applies(prose, ClassLabel(true, false), accept));
  CHECK(penalty_applies(prose, ClassLabel(false, false), accept));
  CHECK_FALSE(penalty_applies(prose, ClassLabel(false, true), accept));
  CHECK_FALSE(penalty_applies(prose, ClassLabel(true, false), meaning_wrong));
  CHECK(penalty_applies(shown, ClassLabel(true, true), meaning_wrong));
  CHECK_FALSE(penalty_applies(shown, ClassLabel(false, true), meaning_wrong));
  CHECK(LossSpec::from_json(shown.to_json()).condition == PenaltyCondition::displayed_case);
}

TEST_CASE("stationary point gives a zero gradient") {
  std::vector<double> d(4);
  loss_and_gradient(LossSpec{LossKind::mse}, ClassLabel(true, true), std::vector<double>{1, 0, 0, 0}, d);
  for (double v : d) CHECK(v == 0.0);
  const auto net = Network::initialized(LayerSpec{{3, 4, 4}}, 2);
  ForwardCache cache;
  const DenseInput x{0.3, -0.2, 0.9};
  net.forward(x, cache);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(x, cache, d, grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("gradient checks") {
  Rng rng(99);
  SUBCASE("dense 3-4-4, cross-entropy") {
    const auto net = Network::initialized(LayerSpec{{3, 4, 4}}, 7);
    CHECK(gradient_check(net, Sample{random_vector(rng, 3), ClassLabel(false, true)}, {LossKind::cross_entropy}) <
          1e-4);
  }
  SUBCASE("dense with relu hidden layers, mse") {
    const auto net = Network::initialized(LayerSpec{{3, 5, 5, 4}, false, Activation::relu}, 8);
    CHECK(gradient_check(net, Sample{random_vector(rng, 3), ClassLabel(true, false)}, {LossKind::mse}) < 1e-4);
  }
  SUBCASE("recurrent, length 3, cross-entropy") {
    const auto net = Network::initialized(LayerSpec{{3, 4, 4}, true}, 9);
    CHECK(gradient_check(net, Sample{random_sequence(rng, 3, 3), ClassLabel(true, true)}, {LossKind::cross_entropy}) <
          1e-4);
  }
  SUBCASE("recurrent 4-6-4, length 4, penalized") {
    const auto net = Network::initialized(LayerSpec{{4, 6, 4}, true}, 10);
    CHECK(gradient_check(net, Sample{random_sequence(rng, 4, 4), ClassLabel(false, false)},
                         {LossKind::penalized, 3.0}) < 1e-4);
  }
  SUBCASE("recurrent with dense stack, mse") {
    const auto net = Network::initialized(LayerSpec{{2, 3, 5, 4}, true}, 11);
    CHECK(gradient_check(net, Sample{random_sequence(rng, 2, 5), ClassLabel(true, false)}, {LossKind::mse}) < 1e-4);
  }
  SUBCASE("zero parameters at the uniform point") {
    const Network net(LayerSpec{{3, 4, 4}});
    const double err = gradient_check(net, Sample{DenseInput{0, 0, 0}, ClassLabel(true, true)}, {LossKind::mse});
    CHECK(std::isfinite(err));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("non-finite gradients name their block") {
  const auto net = Network::initialized(LayerSpec{{3, 4, 4}, true}, 1);
  std::vector<double> grad(net.parameter_count(), 0.0);
  grad[net.blocks()[1].offset + 2] = std::numeric_limits<double>::quiet_NaN();
  try {
    check_finite_gradient(net, grad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("lstm.U") != std::string::npos);
  }
}

TEST_CASE("network files round-trip") {
  Rng rng(4);
  auto net = Network::initialized(LayerSpec{{5, 6, 4}}, 3);
  net.view_descriptor = {{"kind", "bow-concat"}};
  testutil::TempDir dir("net");
  save_network(net, dir.file("n.json"));
  const auto back = load_network(dir.file("n.json"));
  CHECK(back.view_descriptor == net.view_descriptor);
  CHECK(std::equal(back.params().begin(), back.params().end(), net.params().begin()));
  for (int i = 0; i < 100; ++i) {
    const auto x = random_vector(rng, 5, 3.0);
    CHECK(back.forward(x) == net.forward(x));
  }

  auto j = network_to_json(net);
  j["spec"]["widths"][1] = 7;
  CHECK_THROWS_AS(network_from_json(j), ParseError);
  j = network_to_json(net);
  j["version"] = 9;
  CHECK_THROWS_AS(network_from_json(j), ParseError);

  const auto lstm = Network::initialized(LayerSpec{{5, 3, 4}, true}, 1);
  save_network(lstm, dir.file("l.json"));
  try {
    load_network(dir.file("l.json"), false);
    FAIL("expected a recurrent mismatch");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("recurrent") != std::string::npos);
  }
  CHECK_NOTHROW(load_network(dir.file("l.json"), true));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(std::vector<double>{0.5, 0.5, 0.0, 0.0}) == 0);
  CHECK(argmax(std::vector<double>{0.1, 0.3, 0.3, 0.3}) == 1);
}

namespace {

std::vector<Sample> separable(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 4);
    DenseInput x = random_vector(rng, 4, 0.3);
    x[static_cast<std::size_t>(c)] += 2.0;
    out.push_back({x, ClassLabel::from_index(c)});
  }
  return out;
}

double accuracy_of(const Network& net, const std::vector<Sample>& data) {
  double hits = 0;
  for (const auto& s : data) hits += argmax(net.forward(s.input)) == static_cast<std::size_t>(s.gold.index()) ? 1 : 0;
  return hits / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("training separates a linearly separable set") {
  const auto train_set = separable(1, 400), val = separable(2, 100);
  const TrainConfig cfg{OptimizerKind::adam, 0.001, 32, 50, 5, 1};
  const auto r = train(Network::initialized(LayerSpec{{4, 16, 4}}, 5), train_set, val, {LossKind::cross_entropy}, cfg);
  CHECK(accuracy_of(r.network, train_set) >= 0.95);
  CHECK(r.history.epochs.size() <= 50);

  TrainConfig rms = cfg;
  rms.optimizer = OptimizerKind::rmsprop;
  const auto r2 = train(Network::initialized(LayerSpec{{4, 16, 4}}, 5), train_set, val, {LossKind::mse}, rms);
  CHECK(accuracy_of(r2.network, train_set) >= 0.95);
}

TEST_CASE("frozen learning rate stops after patience") {
  const auto data = separable(3, 40);
  const TrainConfig cfg{OptimizerKind::adam, 0.0, 8, 30, 2, 1};
  const auto net = Network::initialized(LayerSpec{{4, 3, 4}}, 2);
  const auto r = train(net, data, data, {LossKind::cross_entropy}, cfg);
  CHECK(r.history.epochs.size() == 3);
  CHECK(r.history.stopped_early);
  CHECK(r.history.best_epoch == 1);
  CHECK(std::equal(r.network.params().begin(), r.network.params().end(), net.params().begin()));
}

TEST_CASE("early stopping returns the best snapshot") {
  const auto train_set = separable(4, 200), val = separable(5, 60);
  const TrainConfig cfg{OptimizerKind::adam, 0.05, 16, 40, 3, 2};
  const auto r = train(Network::initialized(LayerSpec{{4, 8, 4}}, 3), train_set, val, {LossKind::cross_entropy}, cfg);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.history.epochs) best = std::min(best, e.validation_loss);
  CHECK(r.history.best_validation_loss == best);
  CHECK(mean_loss(r.network, val, loss_objective({LossKind::cross_entropy})) == best);
}

TEST_CASE("training is deterministic") {
  const auto train_set = separable(6, 120), val = separable(7, 40);
  const TrainConfig cfg{OptimizerKind::rmsprop, 0.01, 10, 6, 6, 42};
  const auto a = train(Network::initialized(LayerSpec{{4, 6, 4}}, 1), train_set, val, {LossKind::penalized, 3.0}, cfg);
  const auto b = train(Network::initialized(LayerSpec{{4, 6, 4}}, 1), train_set, val, {LossKind::penalized, 3.0}, cfg);
  CHECK(std::equal(a.network.params().begin(), a.network.params().end(), b.network.params().begin()));
  CHECK(a.history.to_json().dump() == b.history.to_json().dump());
}

TEST_CASE("training errors") {
  const auto data = separable(8, 16);
  const auto net = Network::initialized(LayerSpec{{4, 3, 4}}, 2);
  CHECK_THROWS_AS(train(net, {}, data, {}, {}), ValidationError);
  CHECK_THROWS_AS(train(net, data, data, {}, TrainConfig{.patience = 0}), ValidationError);
  CHECK_THROWS_AS(train(net, data, data, {}, TrainConfig{.learning_rate = -1}), ValidationError);
  const Objective nan_objective = [](const Sample&, std::span<const double>, std::span<double> d) {
    std::fill(d.begin(), d.end(), 0.0);
    return std::numeric_limits<double>::quiet_NaN();
  };
  try {
    train_with_objective(net, data, data, nan_objective, {});
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("train config json") {
  const TrainConfig c{OptimizerKind::rmsprop, 0.0001, 16, 30, 4, 9};
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.optimizer == OptimizerKind::rmsprop);
  CHECK(back.learning_rate == 0.0001);
  CHECK(back.batch_size == 16);
  CHECK(back.max_epochs == 30);
  CHECK(back.patience == 4);
  CHECK(back.seed == 9);
  CHECK_THROWS_AS(TrainConfig::from_json({{"optimizer", "sgd"}}), ValidationError);
}
