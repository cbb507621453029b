#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "mef/error.hpp"
#include "mef/layer_spec.hpp"

// Network builders for the six forecasting frameworks. Builders are pure:
// the same arguments always produce the same spec.

namespace mef {

enum class FrameworkId { CNN1 = 1, CNN2, CNN3, CNN4, CNN5, CNN6 };

inline std::string to_string(FrameworkId id) { return "CNN_" + std::to_string(static_cast<int>(id)); }

inline std::optional<FrameworkId> parse_framework(std::string_view s) {
  if (s.size() >= 4 && (s.substr(0, 4) == "CNN_" || s.substr(0, 4) == "cnn_")) s.remove_prefix(4);
  else if (s.size() >= 3 && (s.substr(0, 3) == "CNN" || s.substr(0, 3) == "cnn")) s.remove_prefix(3);
  if (s.size() != 1 || s[0] < '1' || s[0] > '6') return std::nullopt;
  return static_cast<FrameworkId>(s[0] - '0');
}

/// Conv-block knobs. Defaults reproduce the published layer tables; smaller
/// values give down-scaled variants of the same topology.
struct BlockOptions {
  std::size_t num_filters = 136;
  std::size_t kernel_h = 146;
  std::size_t blocks = 3;
  std::size_t pool_stride = 4;

  bool operator==(const BlockOptions&) const = default;
};

namespace detail {

inline void add_blocks(NetworkSpec& spec, const BlockOptions& o, nn::Stride pool_stride) {
  for (std::size_t b = 0; b < o.blocks; ++b) {
    spec.layers.push_back(Conv2DSpec{o.num_filters, o.kernel_h, 1, {1, 1}, nn::Padding::Same});
    spec.layers.push_back(BatchNormSpec{o.num_filters});
    spec.layers.push_back(ReLUSpec{});
    spec.layers.push_back(AvgPoolSpec{{1, 1}, pool_stride});
  }
}

}  // namespace detail

/// Single input variable, single output. 15 layers at the defaults:
/// input 48x1x1 (zero-center), 3 x [conv 136 x 146x1 same, batchnorm, relu,
/// 1x1 avgpool stride 4x4], fc 1, regression.
///
/// `input_width` > 1 stacks extra input variables (e.g. temperature) along
/// the width axis; pooling then strides 1 across width so every variable
/// reaches the fully connected head.
inline NetworkSpec build_cnn1(const BlockOptions& o = {}, std::size_t input_width = 1) {
  require(input_width >= 1, ErrorCode::BadChannelCount, "input width must be >= 1");
  NetworkSpec spec;
  spec.layers.push_back(ImageInputSpec{48, input_width, 1, Normalization::ZeroCenter});
  const nn::Stride pool = input_width == 1 ? nn::Stride{o.pool_stride, o.pool_stride} : nn::Stride{o.pool_stride, 1};
  detail::add_blocks(spec, o, pool);
  spec.layers.push_back(FullyConnectedSpec{1});
  spec.layers.push_back(RegressionOutputSpec{});
  return spec;
}

inline BlockOptions cnn2_defaults() { return {30, 100, 3, 1}; }

/// Multiple input variables stacked along width (48 x c x 1), 30 filters of
/// 100x1, stride-1 pooling so every block stays 48 x c x 30.
inline NetworkSpec build_cnn2(std::size_t num_input_channels, const BlockOptions& o = cnn2_defaults()) {
  require(num_input_channels == 2 || num_input_channels == 3, ErrorCode::BadChannelCount,
          "CNN_2 takes 2 or 3 input variables, got " + std::to_string(num_input_channels));
  NetworkSpec spec;
  spec.layers.push_back(ImageInputSpec{48, num_input_channels, 1, Normalization::ZeroCenter});
  detail::add_blocks(spec, o, {o.pool_stride, 1});
  spec.layers.push_back(FullyConnectedSpec{1});
  spec.layers.push_back(RegressionOutputSpec{});
  return spec;
}

inline BlockOptions cnn45_defaults() { return {136, 146, 2, 4}; }

/// Joint prediction: buildings along width, energy vectors along channels,
/// one output per (vector, building). Pooling strides the time axis only.
inline NetworkSpec build_cnn4(const BlockOptions& o = cnn45_defaults(), std::size_t num_buildings = 39) {
  NetworkSpec spec;
  spec.layers.push_back(ImageInputSpec{48, num_buildings, 3, Normalization::ZeroCenter});
  detail::add_blocks(spec, o, {o.pool_stride, 1});
  spec.layers.push_back(FullyConnectedSpec{3 * num_buildings});
  spec.layers.push_back(RegressionOutputSpec{});
  return spec;
}

/// Multiple-building prediction for one energy vector.
inline NetworkSpec build_cnn5(const BlockOptions& o = cnn45_defaults(), std::size_t num_buildings = 39) {
  NetworkSpec spec;
  spec.layers.push_back(ImageInputSpec{48, num_buildings, 1, Normalization::ZeroCenter});
  detail::add_blocks(spec, o, {o.pool_stride, 1});
  spec.layers.push_back(FullyConnectedSpec{num_buildings});
  spec.layers.push_back(RegressionOutputSpec{});
  return spec;
}

/// Local/global model of the federated framework: CNN_1 with one conv block.
inline NetworkSpec build_cnn6_local(BlockOptions o = {}) {
  o.blocks = 1;
  return build_cnn1(o);
}

/// Spec used by a framework for one model. CNN_3 shares CNN_1's network;
/// CNN_2 with a single input variable falls back to CNN_1.
struct ArchRequest {
  FrameworkId framework = FrameworkId::CNN1;
  std::size_t input_width = 1;
  std::size_t num_buildings = 39;
  std::optional<BlockOptions> blocks;
};

inline NetworkSpec build_for(const ArchRequest& r) {
  switch (r.framework) {
    case FrameworkId::CNN1:
    case FrameworkId::CNN3:
      return build_cnn1(r.blocks.value_or(BlockOptions{}), r.input_width);
    case FrameworkId::CNN2:
      if (r.input_width == 1) return build_cnn1(r.blocks.value_or(BlockOptions{}), 1);
      return build_cnn2(r.input_width, r.blocks.value_or(cnn2_defaults()));
    case FrameworkId::CNN4:
      return build_cnn4(r.blocks.value_or(cnn45_defaults()), r.num_buildings);
    case FrameworkId::CNN5:
      return build_cnn5(r.blocks.value_or(cnn45_defaults()), r.num_buildings);
    case FrameworkId::CNN6:
      return build_cnn6_local(r.blocks.value_or(BlockOptions{}));
  }
  throw Error(ErrorCode::InvalidSpec, "unknown framework");
}

}  // namespace mef
