#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mef/error.hpp"
#include "mef/tensor.hpp"

namespace mef {

/// Number of half-hour samples per input window (previous 24 hours).
inline constexpr std::size_t kWindow = 48;

/// Supervised pairs for one model: inputs H x W x C x Nwin and a row-major
/// Nwin x K target matrix. `target_index[i]` is the time index of window i's
/// target sample in the source series; its input covers the 48 samples
/// immediately before it.
struct WindowSet {
  Tensor4 inputs;
  std::vector<double> targets;
  std::size_t outputs = 1;
  std::vector<std::size_t> target_index;

  std::size_t size() const { return target_index.size(); }
  bool empty() const { return target_index.empty(); }
  Shape3 sample_shape() const { return inputs.shape().sample(); }

  std::span<const double> target_row(std::size_t i) const {
    return std::span<const double>(targets).subspan(i * outputs, outputs);
  }

  /// Column k of the target matrix.
  std::vector<double> target_column(std::size_t k) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = targets[i * outputs + k];
    return out;
  }

  /// Copies the listed windows (in order) into a batch.
  WindowSet gather(std::span<const std::size_t> idx) const {
    require(!idx.empty(), ErrorCode::EmptyTensor, "gather of zero windows");
    const Shape3 s = sample_shape();
    WindowSet out;
    out.outputs = outputs;
    out.inputs = Tensor4({s.h, s.w, s.c, idx.size()});
    out.targets.resize(idx.size() * outputs);
    out.target_index.resize(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto src = inputs.sample(idx[j]);
      auto dst = out.inputs.sample(j);
      std::copy(src.begin(), src.end(), dst.begin());
      const auto row = target_row(idx[j]);
      std::copy(row.begin(), row.end(), out.targets.begin() + static_cast<std::ptrdiff_t>(j * outputs));
      out.target_index[j] = target_index[idx[j]];
    }
    return out;
  }

  /// Windows whose target index lies in [begin, end).
  WindowSet slice_by_target(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (target_index[i] >= begin && target_index[i] < end) idx.push_back(i);
    if (idx.empty()) {
      WindowSet none;
      none.outputs = outputs;
      return none;
    }
    return gather(idx);
  }
};

/// Concatenates window sets with identical sample shape and output width.
inline WindowSet concat(std::span<const WindowSet> parts) {
  std::vector<const WindowSet*> nonempty;
  for (const auto& p : parts)
    if (!p.empty()) nonempty.push_back(&p);
  require(!nonempty.empty(), ErrorCode::InsufficientData, "nothing to concatenate");
  const Shape3 s = nonempty.front()->sample_shape();
  const std::size_t k = nonempty.front()->outputs;
  std::size_t total = 0;
  for (const auto* p : nonempty) {
    require(p->sample_shape() == s && p->outputs == k, ErrorCode::ShapeMismatch, "concat of mismatched windows");
    total += p->size();
  }
  WindowSet out;
  out.outputs = k;
  out.inputs = Tensor4({s.h, s.w, s.c, total});
  std::size_t at = 0;
  for (const auto* p : nonempty) {
    const auto src = p->inputs.data();
    std::copy(src.begin(), src.end(), out.inputs.data().begin() + static_cast<std::ptrdiff_t>(at * s.size()));
    out.targets.insert(out.targets.end(), p->targets.begin(), p->targets.end());
    out.target_index.insert(out.target_index.end(), p->target_index.begin(), p->target_index.end());
    at += p->size();
  }
  return out;
}

}  // namespace mef
