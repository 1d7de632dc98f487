#pragma once

#include <vector>

#include "resmatch/tape.hpp"
#include "resmatch/tensor.hpp"

namespace resmatch::ops {

// Elementwise / scalar
Value add(Tape& t, Value a, Value b);
Value sub(Tape& t, Value a, Value b);
Value mul(Tape& t, Value a, Value b);
Value add_scalar(Tape& t, Value a, float s);
Value scale(Tape& t, Value a, float s);
Value square(Tape& t, Value a);
Value rsqrt_shift(Tape& t, Value a, float shift);  // 1/sqrt(a + shift)
Value relu(Tape& t, Value a);

// Reductions
Value sum(Tape& t, Value a);      // -> scalar
Value l2_norm(Tape& t, Value a);  // -> scalar, sqrt(sum of squares)

// Channel statistics and broadcasting over (N, H, W) for 4-d inputs.
Value mean_channels(Tape& t, Value x);           // [N,C,H,W] -> [C]
Value broadcast_add(Tape& t, Value x, Value c);  // x + c[channel]
Value broadcast_sub(Tape& t, Value x, Value c);
Value broadcast_mul(Tape& t, Value x, Value c);

// Layers
Value conv2d(Tape& t, Value x, Value w, Value b, int stride, int pad);
Value linear(Tape& t, Value x, Value w, Value b);  // x[N,F], w[out,F], b[out]
Value maxpool2d(Tape& t, Value x, int k, int stride);
Value avgpool2d(Tape& t, Value x, int k, int stride);
Value spatial_mean(Tape& t, Value x);  // [N,C,H,W] -> [N,C]
Value flatten2(Tape& t, Value x);      // [N,...] -> [N, rest]

// Losses (batch mean)
Value softmax_cross_entropy(Tape& t, Value logits, const std::vector<int>& labels);
Value kl_divergence(Tape& t, Value logits, const Tensor& target_probs);

// Emulated half16 compute: forward quantizes through binary16 (counting
// finite->inf overflows on the tape), backward is the identity.
Value quantize_half(Tape& t, Value x);

// Non-tape helpers.
Tensor softmax(const Tensor& logits, float temperature = 1.0f);  // rows of [N,K]
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace resmatch::ops
