#include "resmatch/resample.hpp"

#include <algorithm>
#include <cmath>

#include "resmatch/errors.hpp"

namespace resmatch {

namespace {

void axis_map(int src, int dst, std::vector<int>& lo, std::vector<int>& hi,
              std::vector<float>& frac) {
    lo.resize(static_cast<std::size_t>(dst));
    hi.resize(static_cast<std::size_t>(dst));
    frac.resize(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    for (int i = 0; i < dst; ++i) {
        double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        double fl = std::floor(s);
        int i0 = static_cast<int>(fl);
        float f = static_cast<float>(s - fl);
        // Clamp to the border; the two taps collapse onto the edge pixel
        // and the weights stay a convex pair.
        if (i0 < 0) {
            i0 = 0;
            f = 0.0f;
        }
        int i1 = i0 + 1;
        if (i1 > src - 1) {
            i1 = src - 1;
            if (i0 > src - 1) i0 = src - 1;
            if (i0 == i1) f = 0.0f;
        }
        lo[static_cast<std::size_t>(i)] = i0;
        hi[static_cast<std::size_t>(i)] = i1;
        frac[static_cast<std::size_t>(i)] = f;
    }
}

}  // namespace

ResamplePlan ResamplePlan::make(int src_h, int src_w, int dst_h, int dst_w) {
    if (src_h < 1 || src_w < 1) throw ContractError("resample: empty source image");
    if (dst_h < 1 || dst_w < 1)
        throw ContractError("resample: target extent must be >= 1, got " + std::to_string(dst_h) +
                            "x" + std::to_string(dst_w));
    ResamplePlan p;
    p.src_h = src_h;
    p.src_w = src_w;
    p.dst_h = dst_h;
    p.dst_w = dst_w;
    axis_map(src_h, dst_h, p.row_lo, p.row_hi, p.row_frac);
    axis_map(src_w, dst_w, p.col_lo, p.col_hi, p.col_frac);
    return p;
}

Tensor resample(const Tensor& image, int dst_h, int dst_w) {
    if (image.ndim() != 4)
        throw ShapeError("resample: expected [N,C,H,W], got " + image.shape_string());
    if (image.dim(2) == dst_h && image.dim(3) == dst_w) {
        Tensor out = image.clone();
        return out.precision() == Precision::full32 ? out : out.cast(Precision::full32);
    }
    return resample(image, ResamplePlan::make(image.dim(2), image.dim(3), dst_h, dst_w));
}

Tensor resample(const Tensor& image, const ResamplePlan& plan) {
    if (image.ndim() != 4)
        throw ShapeError("resample: expected [N,C,H,W], got " + image.shape_string());
    if (image.dim(2) != plan.src_h || image.dim(3) != plan.src_w)
        throw ShapeError("resample: plan expects source " + std::to_string(plan.src_h) + "x" +
                         std::to_string(plan.src_w) + ", image is " + image.shape_string());
    const int n = image.dim(0), c = image.dim(1);
    Tensor out = Tensor::zeros({n, c, plan.dst_h, plan.dst_w});
    auto os = out.f32();
    const int64_t src_hw = static_cast<int64_t>(plan.src_h) * plan.src_w;
    const int64_t dst_hw = static_cast<int64_t>(plan.dst_h) * plan.dst_w;
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        float* dst = os.data() + nc * dst_hw;
        const int64_t src_base = nc * src_hw;
        for (int oh = 0; oh < plan.dst_h; ++oh) {
            const int r0 = plan.row_lo[static_cast<std::size_t>(oh)];
            const int r1 = plan.row_hi[static_cast<std::size_t>(oh)];
            const float a = plan.row_frac[static_cast<std::size_t>(oh)];
            for (int ow = 0; ow < plan.dst_w; ++ow) {
                const int c0 = plan.col_lo[static_cast<std::size_t>(ow)];
                const int c1 = plan.col_hi[static_cast<std::size_t>(ow)];
                const float b = plan.col_frac[static_cast<std::size_t>(ow)];
                const float v00 = image.at(src_base + static_cast<int64_t>(r0) * plan.src_w + c0);
                const float v10 = image.at(src_base + static_cast<int64_t>(r1) * plan.src_w + c0);
                const float v01 = image.at(src_base + static_cast<int64_t>(r0) * plan.src_w + c1);
                const float v11 = image.at(src_base + static_cast<int64_t>(r1) * plan.src_w + c1);
                dst[static_cast<int64_t>(oh) * plan.dst_w + ow] =
                    (1.0f - a) * (1.0f - b) * v00 + a * (1.0f - b) * v10 + (1.0f - a) * b * v01 +
                    a * b * v11;
            }
        }
    }
    return out;
}

Tensor resample_backward(const Tensor& grad_out, const ResamplePlan& plan) {
    if (grad_out.ndim() != 4)
        throw ShapeError("resample_backward: expected [N,C,H,W], got " + grad_out.shape_string());
    if (grad_out.dim(2) != plan.dst_h || grad_out.dim(3) != plan.dst_w)
        throw ShapeError("resample_backward: plan produces " + std::to_string(plan.dst_h) + "x" +
                         std::to_string(plan.dst_w) + ", gradient is " + grad_out.shape_string());
    const int n = grad_out.dim(0), c = grad_out.dim(1);
    Tensor out = Tensor::zeros({n, c, plan.src_h, plan.src_w});
    auto os = out.f32();
    const int64_t src_hw = static_cast<int64_t>(plan.src_h) * plan.src_w;
    const int64_t dst_hw = static_cast<int64_t>(plan.dst_h) * plan.dst_w;
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        float* dst = os.data() + nc * src_hw;
        const int64_t g_base = nc * dst_hw;
        for (int oh = 0; oh < plan.dst_h; ++oh) {
            const int r0 = plan.row_lo[static_cast<std::size_t>(oh)];
            const int r1 = plan.row_hi[static_cast<std::size_t>(oh)];
            const float a = plan.row_frac[static_cast<std::size_t>(oh)];
            for (int ow = 0; ow < plan.dst_w; ++ow) {
                const int c0 = plan.col_lo[static_cast<std::size_t>(ow)];
                const int c1 = plan.col_hi[static_cast<std::size_t>(ow)];
                const float b = plan.col_frac[static_cast<std::size_t>(ow)];
                const float g = grad_out.at(g_base + static_cast<int64_t>(oh) * plan.dst_w + ow);
                dst[static_cast<int64_t>(r0) * plan.src_w + c0] += (1.0f - a) * (1.0f - b) * g;
                dst[static_cast<int64_t>(r1) * plan.src_w + c0] += a * (1.0f - b) * g;
                dst[static_cast<int64_t>(r0) * plan.src_w + c1] += (1.0f - a) * b * g;
                dst[static_cast<int64_t>(r1) * plan.src_w + c1] += a * b * g;
            }
        }
    }
    return out;
}

}  // namespace resmatch
