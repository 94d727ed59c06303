#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2grade/common.hpp"
#include "l2grade/tensor.hpp"

namespace l2grade::nn {

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Layer widths, input first and output last. A recurrent spec turns the
/// first hidden layer into an LSTM whose final hidden state feeds the dense
/// layers that follow. The output layer is always softmax.
struct LayerSpec {
  std::vector<std::size_t> widths;
  bool recurrent = false;
  Activation hidden = Activation::tanh;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  /// >= 2 widths (>= 3 when recurrent), every width >= 1.
  void validate() const;
  /// validate() plus the 4-way output required of class-posterior experts.
  void validate_expert() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Named Table-1 style architectures: LSTM-W2V, LSTM-W2V-L, LSTM-W2V-M,
/// FFN-BOW-WC, FFN-BOW-TFIDF, LSTM-BERT.
LayerSpec build_architecture(const std::string& name);
const std::vector<std::string>& architecture_names();

/// A contiguous parameter block inside the flat parameter vector.
struct ParamBlock {
  std::string name;  // e.g. "lstm.W", "dense1.b"
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Intermediate values of one forward pass, consumed by backward().
struct ForwardCache {
  // LSTM, per step t: gates [i f g o] (activated), cell c_t, hidden h_t.
  std::vector<double> gates;
  std::vector<double> cells;
  std::vector<double> hiddens;
  std::size_t steps = 0;
  // activations[l] is the input of dense layer l; the last entry is the softmax output.
  std::vector<std::vector<double>> activations;

  const std::vector<double>& output() const { return activations.back(); }
};

class Network {
 public:
  /// All parameters zero.
  explicit Network(LayerSpec spec);

  /// Dense: U(+-sqrt(6/(fan_in+fan_out))). LSTM input and recurrent
  /// weights: U(+-1/sqrt(hidden)); forget-gate bias 1, other biases 0.
  static Network initialized(LayerSpec spec, std::uint64_t seed);

  const LayerSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  /// Block containing flat parameter index `i`.
  const ParamBlock& block_of(std::size_t i) const;

  std::vector<double> forward(const NetInput& input) const;
  void forward(const NetInput& input, ForwardCache& cache) const;

  /// Accumulates dL/dparams into `grad` given dL/d(softmax output).
  void backward(const NetInput& input, const ForwardCache& cache, std::span<const double> d_output,
                std::span<double> grad) const;

  /// Descriptor of the feature view this network consumes; stored verbatim
  /// in the network file.
  nlohmann::json view_descriptor;

 private:
  void layout();
  void check_input(const NetInput& input) const;
  std::size_t dense_count() const { return spec_.widths.size() - (spec_.recurrent ? 2 : 1); }
  std::size_t dense_in(std::size_t l) const { return spec_.widths[l + (spec_.recurrent ? 1 : 0)]; }
  std::size_t dense_out(std::size_t l) const { return spec_.widths[l + (spec_.recurrent ? 2 : 1)]; }

  LayerSpec spec_;
  std::vector<double> params_;
  std::vector<ParamBlock> blocks_;
  // Offsets of the per-layer blocks; LSTM blocks live in lstm_*.
  std::size_t lstm_w_ = 0, lstm_u_ = 0, lstm_b_ = 0;
  std::vector<std::size_t> dense_w_, dense_b_;
};

/// Rejects any non-finite entry, naming the block it sits in.
void check_finite_gradient(const Network& net, std::span<const double> grad);

/// Versioned JSON: layer spec, view descriptor, flat row-major parameters.
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j, std::optional<bool> expect_recurrent = std::nullopt);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path, std::optional<bool> expect_recurrent = std::nullopt);

std::size_t argmax(std::span<const double> v);

}  // namespace l2grade::nn
