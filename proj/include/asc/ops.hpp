#ifndef ASC_OPS_HPP
#define ASC_OPS_HPP

#include <span>
#include <vector>

#include "asc/tensor.hpp"

namespace asc {

// Elementwise; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
/// x + bias broadcast over the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B,M,K] x [B,K,N] -> [B,M,N], or [B,M,K] x [B,N,K]^T when transpose_b.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x[N,in] * weight[in,out] (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
/// Rank-2 transpose.
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation along the last axis; leading dims must agree.
Tensor concat(std::span<const Tensor> parts);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, int axis, Index begin, Index end);
/// Removes `axis`, keeping entry `index`.
Tensor select(const Tensor& x, int axis, Index index);
/// Stacks equal-shaped tensors along a new `axis`.
Tensor stack(std::span<const Tensor> parts, int axis);

/// Softmax over the last axis with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over rows of -log softmax(logits)[label]; logits [N,C].
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels);

/// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& weight, Index stride = 1, Index padding = 0);
/// Padding cells never win the max.
Tensor max_pool2d(const Tensor& input, Index kernel, Index stride, Index padding = 0);
/// [N,C,H,W] -> [N,C]
Tensor global_average_pool(const Tensor& input);

struct BatchNormState {
  Buffer running_mean;
  Buffer running_var;
  Scalar momentum = 0.9;  // weight of the previous running value
  Scalar eps = 1e-5;

  explicit BatchNormState(Index channels = 0)
      : running_mean(static_cast<std::size_t>(channels), 0), running_var(static_cast<std::size_t>(channels), 1) {}
};

/// Per-channel normalization over axis 1 of [N,C] or [N,C,H,W]. Training mode
/// uses batch statistics and updates `state`; evaluation uses running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

/// Single-layer LSTM over x [B,T,in] from a zero state, gate order (i, f, g, o).
/// w_x [in,4h], w_h [h,4h], bias [4h]. Returns every hidden state, [B,T,h].
Tensor lstm(const Tensor& x, const Tensor& w_x, const Tensor& w_h, const Tensor& bias);

}  // namespace asc

#endif  // ASC_OPS_HPP
