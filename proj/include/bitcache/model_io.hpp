#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitcache/mapper.hpp"

namespace bitcache {

/// 8-bit activation tensor in HWC order.
struct Tensor {
  std::uint32_t h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> data;

  Tensor() = default;
  Tensor(std::uint32_t h_, std::uint32_t w_, std::uint32_t c_)
      : h(h_), w(w_), c(c_), data(std::size_t{h_} * w_ * c_, 0) {}

  std::size_t index(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
    return (std::size_t{y} * w + x) * c + ch;
  }
  std::uint8_t at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) const {
    return data[index(y, x, ch)];
  }
  std::uint8_t& at(std::uint32_t y, std::uint32_t x, std::uint32_t ch) {
    return data[index(y, x, ch)];
  }
  bool operator==(const Tensor&) const = default;
};

/// Folded batch normalization on a 32-bit accumulator:
///   y = (((acc >> shift) mod 2^16) * scale[m] + bias[m]) mod 2^32
/// with bias a two's-complement int32, so results may go negative.
struct BatchNormParams {
  std::uint32_t shift = 0;
  std::vector<std::uint16_t> scale;
  std::vector<std::int32_t> bias;
};

struct LayerSpec {
  LayerDescriptor layer;
  /// Producer names: "input", a layer, or a group (its branch outputs, concatenated).
  std::vector<std::string> inputs;
  /// Filter bytes in [M][R][S][C] order; empty when the model carries no weights.
  std::vector<std::uint8_t> weights;
  std::optional<BatchNormParams> bn;
};

struct LayerGroup {
  std::string name;
  std::vector<std::size_t> layers;
  /// Layers whose output no other layer of the group consumes, in order.
  std::vector<std::size_t> outputs;
};

/// Where a layer's input channels come from, in concatenation order.
struct InputSource {
  bool network_input = false;
  std::size_t layer = 0;
};

struct NetworkDescriptor {
  std::string name;
  std::uint32_t in_h = 0, in_w = 0, in_c = 0;
  /// Optional input tensor path (functional runs).
  std::string input_path;
  std::vector<LayerSpec> layers;
  std::vector<LayerGroup> groups;
  /// Resolved producers per layer.
  std::vector<std::vector<InputSource>> sources;

  bool has_weights() const;
  const LayerSpec& find(const std::string& layer_name) const;
  /// Index of the layer whose output is the network output (the last one).
  std::size_t output_layer() const { return layers.size() - 1; }
};

/// Resolves inputs, infers H, W and C along every branch, groups layers and
/// validates shapes. Throws Error(Schema | ShapeMismatch | MissingInput).
void finalize_descriptor(NetworkDescriptor& net);

NetworkDescriptor parse_descriptor(const nlohmann::json& j, const std::string& base_dir = ".");
NetworkDescriptor load_descriptor(const std::string& path);
/// Writes the descriptor JSON plus one tensor file (and sidecar) per weighted layer.
void save_descriptor(const NetworkDescriptor& net, const std::string& dir,
                     const std::string& file_name = "model.json");

/// The 20-row Inception v3 network, branches reconstructed from the public
/// topology; batch norm is folded into the convolutions. No weights.
NetworkDescriptor inception_v3();

/// Small quantized CNN with deterministic pseudo-random weights: a 3x3 conv
/// with batch norm and ReLU, 3x3/2 max pool, a 5x5 conv, global average pool
/// and a fully connected layer, on a 16x16x3 input.
NetworkDescriptor toy_network(std::uint64_t seed = 1);
Tensor random_input(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed);

/// Deterministic weights (and batch-norm constants where flagged) for every layer.
void fill_random_weights(NetworkDescriptor& net, std::uint64_t seed);

enum class TensorLayout { Regular, Transposed };

/// Raw tensor file plus JSON sidecar ("<path>.json") holding shape, layout and width.
struct TensorFile {
  std::vector<std::uint32_t> shape;
  TensorLayout layout = TensorLayout::Regular;
  std::uint32_t width_bits = 8;
  /// Elements in regular order regardless of the on-disk layout.
  std::vector<std::uint8_t> data;
};

TensorFile read_tensor(const std::string& path);
void write_tensor(const std::string& path, const TensorFile& t);
std::string sidecar_path(const std::string& tensor_path);

Tensor to_activation(const TensorFile& t);
TensorFile from_activation(const Tensor& t, TensorLayout layout = TensorLayout::Regular);

/// Plain integer inference, element by element: the oracle for functional runs.
/// Returns every layer's output keyed by layer name.
std::map<std::string, Tensor> reference_inference(const NetworkDescriptor& net,
                                                  const Tensor& input);

struct DiffReport {
  bool match = true;
  std::size_t mismatches = 0;
  std::uint32_t y = 0, x = 0, c = 0;
  int expected = 0, actual = 0;
};

/// Throws Error(ShapeMismatch) when shapes differ.
DiffReport compare_outputs(const Tensor& expected, const Tensor& actual);

}  // namespace bitcache
