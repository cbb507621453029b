#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mef/error.hpp"
#include "mef/layers.hpp"
#include "mef/tensor.hpp"

namespace mef {

enum class Normalization { ZeroCenter, None };

struct ImageInputSpec {
  std::size_t h = 48;
  std::size_t w = 1;
  std::size_t c = 1;
  Normalization normalization = Normalization::ZeroCenter;
  bool operator==(const ImageInputSpec&) const = default;
};

struct Conv2DSpec {
  std::size_t num_filters = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  nn::Stride stride{};
  nn::Padding padding = nn::Padding::Same;
  bool operator==(const Conv2DSpec&) const = default;
};

/// `channels == 0` means "inferred from the preceding layer".
struct BatchNormSpec {
  std::size_t channels = 0;
  bool operator==(const BatchNormSpec&) const = default;
};

struct ReLUSpec {
  bool operator==(const ReLUSpec&) const = default;
};

struct AvgPoolSpec {
  nn::Pool pool{};
  nn::Stride stride{};
  bool operator==(const AvgPoolSpec&) const = default;
};

struct FullyConnectedSpec {
  std::size_t out_units = 1;
  bool operator==(const FullyConnectedSpec&) const = default;
};

struct RegressionOutputSpec {
  bool operator==(const RegressionOutputSpec&) const = default;
};

using LayerSpec = std::variant<ImageInputSpec, Conv2DSpec, BatchNormSpec, ReLUSpec, AvgPoolSpec, FullyConnectedSpec,
                               RegressionOutputSpec>;

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  bool operator==(const NetworkSpec&) const = default;

  const ImageInputSpec& input() const {
    require(!layers.empty() && std::holds_alternative<ImageInputSpec>(layers.front()), ErrorCode::InvalidSpec,
            "network has no image input layer");
    return std::get<ImageInputSpec>(layers.front());
  }
};

inline bool is_learnable(const LayerSpec& l) {
  return std::holds_alternative<Conv2DSpec>(l) || std::holds_alternative<BatchNormSpec>(l) ||
         std::holds_alternative<FullyConnectedSpec>(l);
}

inline std::string layer_kind_name(const LayerSpec& l) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ImageInputSpec>) return "imageinput";
        else if constexpr (std::is_same_v<T, Conv2DSpec>) return "conv2d";
        else if constexpr (std::is_same_v<T, BatchNormSpec>) return "batchnorm";
        else if constexpr (std::is_same_v<T, ReLUSpec>) return "relu";
        else if constexpr (std::is_same_v<T, AvgPoolSpec>) return "avgpool";
        else if constexpr (std::is_same_v<T, FullyConnectedSpec>) return "fc";
        else return "regression";
      },
      l);
}

/// Structural checks: input first and unique, regression last and unique,
/// every kernel/pool/stride dim >= 1.
inline void validate(const NetworkSpec& spec) {
  const auto& ls = spec.layers;
  require(ls.size() >= 2, ErrorCode::InvalidSpec, "network needs at least an input and a regression layer");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const bool is_input = std::holds_alternative<ImageInputSpec>(ls[i]);
    const bool is_out = std::holds_alternative<RegressionOutputSpec>(ls[i]);
    if (is_input && i != 0) throw LayerError(ErrorCode::InvalidSpec, i, "image input must be the first layer only");
    if (is_out && i + 1 != ls.size())
      throw LayerError(ErrorCode::InvalidSpec, i, "regression output must be the last layer only");
    if (i == 0 && !is_input) throw LayerError(ErrorCode::InvalidSpec, 0, "first layer must be an image input");
    if (i + 1 == ls.size() && !is_out)
      throw LayerError(ErrorCode::InvalidSpec, i, "last layer must be a regression output");
    if (const auto* in = std::get_if<ImageInputSpec>(&ls[i])) {
      if (in->h == 0 || in->w == 0 || in->c == 0)
        throw LayerError(ErrorCode::InvalidSpec, i, "input dims must be >= 1");
    } else if (const auto* cv = std::get_if<Conv2DSpec>(&ls[i])) {
      if (cv->num_filters == 0 || cv->kernel_h == 0 || cv->kernel_w == 0 || cv->stride.h == 0 || cv->stride.w == 0)
        throw LayerError(ErrorCode::InvalidSpec, i, "conv filter/kernel/stride must be >= 1");
    } else if (const auto* p = std::get_if<AvgPoolSpec>(&ls[i])) {
      if (p->pool.h == 0 || p->pool.w == 0 || p->stride.h == 0 || p->stride.w == 0)
        throw LayerError(ErrorCode::InvalidSpec, i, "pool/stride must be >= 1");
    } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&ls[i])) {
      if (fc->out_units == 0) throw LayerError(ErrorCode::InvalidSpec, i, "fc out units must be >= 1");
    }
  }
}

/// Symbolic forward shape inference. Entry i is the per-sample activation
/// shape produced by layer i (the "activations" column of a layer table).
inline std::vector<Shape3> activation_shapes(const NetworkSpec& spec) {
  validate(spec);
  std::vector<Shape3> shapes;
  shapes.reserve(spec.layers.size());
  Shape3 cur{};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (const auto* in = std::get_if<ImageInputSpec>(&l)) {
      cur = {in->h, in->w, in->c};
    } else if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
      const auto ah = nn::conv_axis(cur.h, cv->kernel_h, cv->stride.h, cv->padding);
      const auto aw = nn::conv_axis(cur.w, cv->kernel_w, cv->stride.w, cv->padding);
      if (ah.out < 1 || aw.out < 1)
        throw LayerError(ErrorCode::ShapeUnderflow, i, "convolution output would be empty for input " + to_string(cur));
      cur = {ah.out, aw.out, cv->num_filters};
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&l)) {
      if (bn->channels != 0 && bn->channels != cur.c)
        throw LayerError(ErrorCode::ChannelMismatch, i,
                         "batchnorm declares " + std::to_string(bn->channels) + " channels, input has " +
                             std::to_string(cur.c));
    } else if (const auto* p = std::get_if<AvgPoolSpec>(&l)) {
      const std::size_t oh = nn::pool_axis(cur.h, p->pool.h, p->stride.h);
      const std::size_t ow = nn::pool_axis(cur.w, p->pool.w, p->stride.w);
      if (oh < 1 || ow < 1)
        throw LayerError(ErrorCode::ShapeUnderflow, i, "pooling output would be empty for input " + to_string(cur));
      cur = {oh, ow, cur.c};
    } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&l)) {
      cur = {1, 1, fc->out_units};
    }
    shapes.push_back(cur);
  }
  return shapes;
}

/// Number of regression outputs of a valid spec.
inline std::size_t output_units(const NetworkSpec& spec) { return activation_shapes(spec).back().c; }

// ---------------------------------------------------------------------------
// Text format: one layer per line, '#' starts a comment.
//
//   imageinput 48x1x1 zerocenter
//   conv2d 136 146x1 stride 1x1 same
//   batchnorm 136
//   relu
//   avgpool 1x1 stride 4x4
//   fc 1
//   regression

namespace detail {

inline std::string pair_str(std::size_t a, std::size_t b) { return std::to_string(a) + "x" + std::to_string(b); }

inline bool parse_dims(const std::string& tok, std::vector<std::size_t>& out, std::size_t count) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= tok.size()) {
    const std::size_t x = tok.find('x', pos);
    const std::string part = tok.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) return false;
    out.push_back(std::stoull(part));
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return out.size() == count;
}

}  // namespace detail

inline std::string to_text(const LayerSpec& l) {
  using detail::pair_str;
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ImageInputSpec>) {
          return "imageinput " + std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c) +
                 (s.normalization == Normalization::ZeroCenter ? " zerocenter" : " none");
        } else if constexpr (std::is_same_v<T, Conv2DSpec>) {
          return "conv2d " + std::to_string(s.num_filters) + " " + pair_str(s.kernel_h, s.kernel_w) + " stride " +
                 pair_str(s.stride.h, s.stride.w) + (s.padding == nn::Padding::Same ? " same" : " none");
        } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
          return "batchnorm " + std::to_string(s.channels);
        } else if constexpr (std::is_same_v<T, ReLUSpec>) {
          return "relu";
        } else if constexpr (std::is_same_v<T, AvgPoolSpec>) {
          return "avgpool " + pair_str(s.pool.h, s.pool.w) + " stride " + pair_str(s.stride.h, s.stride.w);
        } else if constexpr (std::is_same_v<T, FullyConnectedSpec>) {
          return "fc " + std::to_string(s.out_units);
        } else {
          return "regression";
        }
      },
      l);
}

inline std::string to_text(const NetworkSpec& spec) {
  std::string out;
  for (const auto& l : spec.layers) out += to_text(l) + "\n";
  return out;
}

inline NetworkSpec parse_spec(const std::string& text) {
  NetworkSpec spec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw ParseError(lineno, msg + " in '" + line + "'"); };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = line.substr(0, line.find('#'));
    std::istringstream ls(body);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    std::vector<std::size_t> d;
    const std::string& kind = tok[0];
    if (kind == "imageinput") {
      if (tok.size() != 3 || !detail::parse_dims(tok[1], d, 3)) fail("expected 'imageinput HxWxC norm'");
      Normalization norm{};
      if (tok[2] == "zerocenter") norm = Normalization::ZeroCenter;
      else if (tok[2] == "none") norm = Normalization::None;
      else fail("unknown normalization");
      spec.layers.push_back(ImageInputSpec{d[0], d[1], d[2], norm});
    } else if (kind == "conv2d") {
      std::vector<std::size_t> st;
      if (tok.size() != 6 || tok[3] != "stride" || !detail::parse_dims(tok[1], d, 1)) fail("bad conv2d line");
      const std::size_t filters = d[0];
      if (!detail::parse_dims(tok[2], d, 2) || !detail::parse_dims(tok[4], st, 2)) fail("bad conv2d dims");
      nn::Padding pad{};
      if (tok[5] == "same") pad = nn::Padding::Same;
      else if (tok[5] == "none") pad = nn::Padding::None;
      else fail("unknown padding");
      spec.layers.push_back(Conv2DSpec{filters, d[0], d[1], {st[0], st[1]}, pad});
    } else if (kind == "batchnorm") {
      if (tok.size() != 2 || !detail::parse_dims(tok[1], d, 1)) fail("expected 'batchnorm C'");
      spec.layers.push_back(BatchNormSpec{d[0]});
    } else if (kind == "relu") {
      if (tok.size() != 1) fail("relu takes no arguments");
      spec.layers.push_back(ReLUSpec{});
    } else if (kind == "avgpool") {
      std::vector<std::size_t> st;
      if (tok.size() != 4 || tok[2] != "stride" || !detail::parse_dims(tok[1], d, 2) ||
          !detail::parse_dims(tok[3], st, 2))
        fail("expected 'avgpool PHxPW stride SHxSW'");
      spec.layers.push_back(AvgPoolSpec{{d[0], d[1]}, {st[0], st[1]}});
    } else if (kind == "fc") {
      if (tok.size() != 2 || !detail::parse_dims(tok[1], d, 1)) fail("expected 'fc UNITS'");
      spec.layers.push_back(FullyConnectedSpec{d[0]});
    } else if (kind == "regression") {
      if (tok.size() != 1) fail("regression takes no arguments");
      spec.layers.push_back(RegressionOutputSpec{});
    } else {
      fail("unknown layer kind '" + kind + "'");
    }
  }
  validate(spec);
  return spec;
}

/// Human-readable table with activations and learnable shapes, one row per layer.
inline std::string layer_table(const NetworkSpec& spec) {
  const auto shapes = activation_shapes(spec);
  std::ostringstream os;
  os << "nr\tlayer\tactivations\tlearnable\n";
  Shape3 prev{};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    std::string learn = "-";
    if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
      learn = "Weights " + std::to_string(cv->kernel_h) + "x" + std::to_string(cv->kernel_w) + "x" +
              std::to_string(prev.c) + "x" + std::to_string(cv->num_filters) + " Bias 1x1x" +
              std::to_string(cv->num_filters);
    } else if (std::holds_alternative<BatchNormSpec>(l)) {
      learn = "Offset 1x1x" + std::to_string(prev.c) + " Scale 1x1x" + std::to_string(prev.c);
    } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&l)) {
      learn = "Weights " + std::to_string(fc->out_units) + "x" + std::to_string(prev.size()) + " Bias " +
              std::to_string(fc->out_units) + "x1";
    }
    os << (i + 1) << "\t" << to_text(l) << "\t" << to_string(shapes[i]) << "x1\t" << learn << "\n";
    prev = shapes[i];
  }
  return os.str();
}

}  // namespace mef
