#include "l2grade/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace l2grade::nn {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// out += W x, W row-major rows x cols.
void matvec_add(const double* W, std::size_t rows, std::size_t cols, const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = W + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
    out[r] += acc;
  }
}

// out += W^T d
void matvec_t_add(const double* W, std::size_t rows, std::size_t cols, const double* d, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = W + r * cols;
    const double dr = d[r];
    if (dr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += w[c] * dr;
  }
}

// G += d x^T
void outer_add(double* G, std::size_t rows, std::size_t cols, const double* d, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    double* g = G + r * cols;
    for (std::size_t c = 0; c < cols; ++c) g[c] += dr * x[c];
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ValidationError("unknown activation: " + name);
}

void LayerSpec::validate() const {
  if (widths.size() < 2) throw ValidationError("a layer spec needs at least 2 widths");
  if (recurrent && widths.size() < 3) {
    throw ValidationError("a recurrent layer spec needs input, recurrent and output widths");
  }
  for (auto w : widths) {
    if (w < 1) throw ValidationError("layer widths must be >= 1");
  }
}

void LayerSpec::validate_expert() const {
  validate();
  if (output_width() != 4) {
    throw ValidationError("expert networks need a 4-way output layer, got " + std::to_string(output_width()));
  }
}

const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names = {"LSTM-W2V",   "LSTM-W2V-L",    "LSTM-W2V-M",
                                                 "FFN-BOW-WC", "FFN-BOW-TFIDF", "LSTM-BERT"};
  return names;
}

LayerSpec build_architecture(const std::string& name) {
  static const std::map<std::string, LayerSpec> table = {
      {"LSTM-W2V", {{300, 300, 4}, true}},
      {"LSTM-W2V-L", {{300, 175, 4}, true}},
      {"LSTM-W2V-M", {{301, 75, 25, 25, 20, 4}, true}},
      {"FFN-BOW-WC", {{2040, 150, 150, 150, 170, 15, 4}, false}},
      {"FFN-BOW-TFIDF", {{2040, 210, 130, 150, 170, 15, 4}, false}},
      {"LSTM-BERT", {{769, 100, 100, 20, 20, 4}, true}},
  };
  const auto it = table.find(name);
  if (it == table.end()) throw ValidationError("unknown architecture: " + name);
  return it->second;
}

// --- Network ----------------------------------------------------------------

Network::Network(LayerSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  layout();
}

void Network::layout() {
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
    return blocks_.back().offset;
  };
  if (spec_.recurrent) {
    const std::size_t D = spec_.widths[0];
    const std::size_t H = spec_.widths[1];
    lstm_w_ = add("lstm.W", 4 * H, D);
    lstm_u_ = add("lstm.U", 4 * H, H);
    lstm_b_ = add("lstm.b", 4 * H, 1);
  }
  for (std::size_t l = 0; l < dense_count(); ++l) {
    dense_w_.push_back(add("dense" + std::to_string(l) + ".W", dense_out(l), dense_in(l)));
    dense_b_.push_back(add("dense" + std::to_string(l) + ".b", dense_out(l), 1));
  }
  params_.assign(offset, 0.0);
}

Network Network::initialized(LayerSpec spec, std::uint64_t seed) {
  Network net(std::move(spec));
  Rng rng(seed);
  if (net.spec_.recurrent) {
    const std::size_t D = net.spec_.widths[0];
    const std::size_t H = net.spec_.widths[1];
    const double r = 1.0 / std::sqrt(static_cast<double>(H));
    for (std::size_t i = 0; i < 4 * H * D; ++i) net.params_[net.lstm_w_ + i] = uniform(rng, -r, r);
    for (std::size_t i = 0; i < 4 * H * H; ++i) net.params_[net.lstm_u_ + i] = uniform(rng, -r, r);
    for (std::size_t h = 0; h < H; ++h) net.params_[net.lstm_b_ + H + h] = 1.0;
  }
  for (std::size_t l = 0; l < net.dense_count(); ++l) {
    const double fan = static_cast<double>(net.dense_in(l) + net.dense_out(l));
    const double r = std::sqrt(6.0 / fan);
    const std::size_t n = net.dense_in(l) * net.dense_out(l);
    for (std::size_t i = 0; i < n; ++i) net.params_[net.dense_w_[l] + i] = uniform(rng, -r, r);
  }
  return net;
}

const ParamBlock& Network::block_of(std::size_t i) const {
  for (const auto& b : blocks_) {
    if (i >= b.offset && i < b.offset + b.size()) return b;
  }
  throw ValidationError("parameter index out of range");
}

void Network::check_input(const NetInput& input) const {
  if (spec_.recurrent) {
    const auto* seq = std::get_if<Sequence>(&input);
    if (seq == nullptr) throw ValidationError("recurrent network expects a vector sequence");
    if (seq->steps() > 0 && seq->dim != spec_.input_width()) {
      throw ValidationError("sequence step width " + std::to_string(seq->dim) + " != network input width " +
                            std::to_string(spec_.input_width()));
    }
  } else {
    const auto* vec = std::get_if<DenseInput>(&input);
    if (vec == nullptr) throw ValidationError("feed-forward network expects a dense vector");
    if (vec->size() != spec_.input_width()) {
      throw ValidationError("input width " + std::to_string(vec->size()) + " != network input width " +
                            std::to_string(spec_.input_width()));
    }
  }
}

std::vector<double> Network::forward(const NetInput& input) const {
  ForwardCache cache;
  forward(input, cache);
  return cache.activations.back();
}

void Network::forward(const NetInput& input, ForwardCache& cache) const {
  check_input(input);
  cache.activations.resize(dense_count() + 1);
  const double* p = params_.data();

  if (spec_.recurrent) {
    const auto& seq = std::get<Sequence>(input);
    const std::size_t D = spec_.widths[0];
    const std::size_t H = spec_.widths[1];
    const std::size_t T = seq.steps();
    cache.steps = T;
    cache.gates.assign(T * 4 * H, 0.0);
    cache.cells.assign((T + 1) * H, 0.0);
    cache.hiddens.assign((T + 1) * H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double* z = &cache.gates[t * 4 * H];
      std::copy(p + lstm_b_, p + lstm_b_ + 4 * H, z);
      matvec_add(p + lstm_w_, 4 * H, D, seq.data.data() + t * D, z);
      matvec_add(p + lstm_u_, 4 * H, H, &cache.hiddens[t * H], z);
      const double* c_prev = &cache.cells[t * H];
      double* c = &cache.cells[(t + 1) * H];
      double* h = &cache.hiddens[(t + 1) * H];
      for (std::size_t k = 0; k < H; ++k) {
        const double i = sigmoid(z[k]);
        const double f = sigmoid(z[H + k]);
        const double g = std::tanh(z[2 * H + k]);
        const double o = sigmoid(z[3 * H + k]);
        z[k] = i;
        z[H + k] = f;
        z[2 * H + k] = g;
        z[3 * H + k] = o;
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * std::tanh(c[k]);
      }
    }
    cache.activations[0].assign(cache.hiddens.begin() + static_cast<std::ptrdiff_t>(T * H),
                                cache.hiddens.begin() + static_cast<std::ptrdiff_t>((T + 1) * H));
  } else {
    cache.steps = 0;
    cache.activations[0] = std::get<DenseInput>(input);
  }

  for (std::size_t l = 0; l < dense_count(); ++l) {
    const std::size_t in = dense_in(l);
    const std::size_t out = dense_out(l);
    auto& a = cache.activations[l + 1];
    a.assign(p + dense_b_[l], p + dense_b_[l] + out);
    matvec_add(p + dense_w_[l], out, in, cache.activations[l].data(), a.data());
    if (l + 1 == dense_count()) {
      softmax_inplace(a);
    } else if (spec_.hidden == Activation::tanh) {
      for (double& v : a) v = std::tanh(v);
    } else {
      for (double& v : a) v = std::max(0.0, v);
    }
  }
}

void Network::backward(const NetInput& input, const ForwardCache& cache, std::span<const double> d_output,
                       std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ValidationError("gradient buffer does not match parameter count");
  const double* p = params_.data();
  double* g = grad.data();

  // Softmax Jacobian: dz_j = p_j (d_j - sum_k d_k p_k).
  const auto& out = cache.activations.back();
  std::vector<double> delta(out.size());
  double dot = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) dot += d_output[k] * out[k];
  for (std::size_t k = 0; k < out.size(); ++k) delta[k] = out[k] * (d_output[k] - dot);

  for (std::size_t l = dense_count(); l-- > 0;) {
    const std::size_t in = dense_in(l);
    const std::size_t nout = dense_out(l);
    const auto& a_in = cache.activations[l];
    outer_add(g + dense_w_[l], nout, in, delta.data(), a_in.data());
    for (std::size_t r = 0; r < nout; ++r) g[dense_b_[l] + r] += delta[r];
    if (l == 0 && !spec_.recurrent) break;
    std::vector<double> d_in(in, 0.0);
    matvec_t_add(p + dense_w_[l], nout, in, delta.data(), d_in.data());
    if (l > 0) {
      for (std::size_t c = 0; c < in; ++c) {
        const double a = a_in[c];
        d_in[c] *= spec_.hidden == Activation::tanh ? 1.0 - a * a : (a > 0.0 ? 1.0 : 0.0);
      }
    }
    delta = std::move(d_in);
  }
  if (!spec_.recurrent) return;

  // Backpropagation through time; `delta` holds dL/dh_T.
  const auto& seq = std::get<Sequence>(input);
  const std::size_t D = spec_.widths[0];
  const std::size_t H = spec_.widths[1];
  std::vector<double> dh = std::move(delta);
  std::vector<double> dc(H, 0.0);
  std::vector<double> dz(4 * H);
  for (std::size_t t = cache.steps; t-- > 0;) {
    const double* gates = &cache.gates[t * 4 * H];
    const double* c = &cache.cells[(t + 1) * H];
    const double* c_prev = &cache.cells[t * H];
    for (std::size_t k = 0; k < H; ++k) {
      const double i = gates[k];
      const double f = gates[H + k];
      const double gg = gates[2 * H + k];
      const double o = gates[3 * H + k];
      const double tc = std::tanh(c[k]);
      const double d_o = dh[k] * tc;
      const double d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
      dz[k] = d_c * gg * i * (1.0 - i);
      dz[H + k] = d_c * c_prev[k] * f * (1.0 - f);
      dz[2 * H + k] = d_c * i * (1.0 - gg * gg);
      dz[3 * H + k] = d_o * o * (1.0 - o);
      dc[k] = d_c * f;
    }
    outer_add(g + lstm_w_, 4 * H, D, dz.data(), seq.data.data() + t * D);
    outer_add(g + lstm_u_, 4 * H, H, dz.data(), &cache.hiddens[t * H]);
    for (std::size_t r = 0; r < 4 * H; ++r) g[lstm_b_ + r] += dz[r];
    std::fill(dh.begin(), dh.end(), 0.0);
    matvec_t_add(p + lstm_u_, 4 * H, H, dz.data(), dh.data());
  }
}

void check_finite_gradient(const Network& net, std::span<const double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw Error("non-finite gradient in layer block " + net.block_of(i).name);
    }
  }
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// --- persistence ------------------------------------------------------------------

json network_to_json(const Network& net) {
  const auto params = net.params();
  return {{"format", "l2grade-network"},
          {"version", kFormatVersion},
          {"spec",
           {{"widths", net.spec().widths},
            {"recurrent", net.spec().recurrent},
            {"hidden_activation", to_string(net.spec().hidden)},
            {"output_activation", "softmax"}}},
          {"view", net.view_descriptor},
          {"parameter_count", net.parameter_count()},
          {"params", std::vector<double>(params.begin(), params.end())}};
}

Network network_from_json(const json& j, std::optional<bool> expect_recurrent) {
  if (j.value("format", "") != "l2grade-network") throw ParseError("not an l2grade-network file");
  if (j.value("version", 0) != kFormatVersion) {
    throw ParseError("network format version " + std::to_string(j.value("version", 0)) + " is not supported (expected " +
                     std::to_string(kFormatVersion) + ")");
  }
  const auto& s = j.at("spec");
  LayerSpec spec{s.at("widths").get<std::vector<std::size_t>>(), s.at("recurrent").get<bool>(),
                 parse_activation(s.value("hidden_activation", std::string("tanh")))};
  if (expect_recurrent && *expect_recurrent != spec.recurrent) {
    throw ValidationError(std::string("network file has recurrent=") + (spec.recurrent ? "true" : "false") +
                          " but the consumer expects recurrent=" + (*expect_recurrent ? "true" : "false"));
  }
  Network net(spec);
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != net.parameter_count() || j.value("parameter_count", params.size()) != params.size()) {
    throw ParseError("parameter array has " + std::to_string(params.size()) + " entries but the layer spec needs " +
                     std::to_string(net.parameter_count()));
  }
  for (double v : params) {
    if (!std::isfinite(v)) throw ParseError("network file holds a non-finite parameter");
  }
  std::copy(params.begin(), params.end(), net.params().begin());
  net.view_descriptor = j.value("view", json());
  return net;
}

void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << network_to_json(net).dump() << '\n';
}

Network load_network(const std::string& path, std::optional<bool> expect_recurrent) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return network_from_json(json::parse(in), expect_recurrent);
}

}  // namespace l2grade::nn
