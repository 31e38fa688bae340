// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msdemucs/autograd.hpp"

namespace msd::nn {

using ag::Shape;
using ag::Tensor;

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  /// Left padding of kernel-1 zeros: output t sees input up to t*stride.
  static Conv1dOptions causal(std::size_t kernel, std::size_t stride) {
    return {stride, kernel - 1, 0};
  }
  /// Same output length as causal(), padding split around the kernel.
  static Conv1dOptions centred(std::size_t kernel, std::size_t stride) {
    return {stride, (kernel - 1) / 2, kernel - 1 - (kernel - 1) / 2};
  }
};

/// x [B, Cin, T], weight [Cout, Cin, K], bias [Cout] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opts);

/// x [B, Cin, T], weight [Cin, Cout, K] -> [B, Cout, (T-1)*stride + K].
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, std::size_t stride);

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_top = 0;
  std::size_t pad_bottom = 0;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
};

/// x [B, Cin, H, W], weight [Cout, Cin, kH, kW].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opts);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalisation over batch x H x W. Training mode uses batch
/// statistics and updates the running estimates; eval mode is the affine
/// map defined by the running estimates.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training);

/// Linear map along the channel axis of x [B, Cin, T]; weight [Cout, Cin].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Splits `axis` in halves (a, b) and returns a * sigmoid(b).
Tensor glu(const Tensor& x, std::size_t axis = 1);

/// Concatenates along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> xs, std::size_t axis);

/// x[..., begin : begin + length] along the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t length);

/// Sinc resampling of every row along the last axis (factor 1, 2 or 4).
/// Output extent is T*factor for upsampling and (T + factor/2)/factor for
/// downsampling.
Tensor upsample_last(const Tensor& x, int factor);
Tensor downsample_last(const Tensor& x, int factor);

/// Two-tap gather along the last axis of x [B, C, N]:
/// out[..., t] = w0[t] * x[..., i0[t]] + w1[t] * x[..., i1[t]].
struct FrameGather {
  std::vector<std::size_t> i0;
  std::vector<std::size_t> i1;
  std::vector<double> w0;
  std::vector<double> w1;

  std::size_t size() const { return i0.size(); }
};
Tensor gather_frames(const Tensor& x, const FrameGather& plan);

/// [B, C, T] <-> [T, B, C].
Tensor bct_to_tbc(const Tensor& x);
Tensor tbc_to_bct(const Tensor& x);

/// Gate order i, f, g, o. w_ih [4H, F], w_hh [4H, H], biases [4H].
struct LstmLayerParams {
  Tensor w_ih;
  Tensor w_hh;
  Tensor b_ih;
  Tensor b_hh;
};

/// Unidirectional LSTM over x [T, B, F] from a zero state.
Tensor lstm_layer(const Tensor& x, const LstmLayerParams& p);
Tensor lstm(const Tensor& x, std::span<const LstmLayerParams> layers);

/// Ordered, named parameter and buffer registry.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  struct BufferEntry {
    std::string name;
    BatchNormState* state;
  };

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded from (seed, name) so a
  /// parameter's initial value does not depend on which others exist.
  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in,
                  std::uint64_t seed);
  Tensor constant(const std::string& name, Shape shape, double value);
  void add_buffer(const std::string& name, BatchNormState& state);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<BufferEntry>& buffers() const { return buffers_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::vector<BufferEntry> buffers_;
};

/// 64-bit FNV-1a, used to derive per-parameter seeds.
std::uint64_t fnv1a(std::string_view text);

}  // namespace msd::nn
