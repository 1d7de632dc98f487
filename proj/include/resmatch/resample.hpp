#pragma once

#include "resmatch/tensor.hpp"

namespace resmatch {

// Precomputed bilinear map from (h, w) to (h_out, w_out). For every output
// pixel the four source corners and convex weights are stored; weights sum
// to 1 and source indices are edge-clamped.
//
// Coordinate convention: half-pixel centers, src = (dst + 0.5) * size_ratio
// - 0.5, clamped at the borders.
struct ResamplePlan {
    int src_h = 0, src_w = 0;
    int dst_h = 0, dst_w = 0;
    // Per output row/column: low index, high index, fraction toward high.
    std::vector<int> row_lo, row_hi, col_lo, col_hi;
    std::vector<float> row_frac, col_frac;

    static ResamplePlan make(int src_h, int src_w, int dst_h, int dst_w);
    bool identity() const { return src_h == dst_h && src_w == dst_w; }
};

// Bilinear resample of [N,C,H,W] to (dst_h, dst_w). Equal source and target
// dims return a bit-identical copy. Output is full32.
Tensor resample(const Tensor& image, int dst_h, int dst_w);
Tensor resample(const Tensor& image, const ResamplePlan& plan);

// Transpose of the bilinear map: grad_in = W^T grad_out, where W is the
// (dst_h*dst_w x src_h*src_w) weight matrix the plan encodes. Exactly
// linear; used for adjoint checks and available for loss compositions that
// differentiate through a resample.
Tensor resample_backward(const Tensor& grad_out, const ResamplePlan& plan);

}  // namespace resmatch
