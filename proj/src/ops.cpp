#include "resmatch/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <limits>

#include "resmatch/errors.hpp"
#include "resmatch/half.hpp"

namespace resmatch::ops {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims())
        throw ShapeError(std::string(op) + ": operand shapes " + a.shape_string() + " and " +
                         b.shape_string() + " differ");
}

void check_4d(const Tensor& x, const char* op) {
    if (x.ndim() != 4)
        throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + x.shape_string());
}

void accumulate(Tape& t, int parent, const std::vector<float>& contribution) {
    if (!t.node_requires_grad(parent)) return;
    auto& g = t.node_grad(parent);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Value add(Tape& t, Value a, Value b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    check_same_shape(av, bv, "add");
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    auto bs = bv.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] + bs[i];
    return t.emit("add", std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        accumulate(tp, a.id, go);
        accumulate(tp, b.id, go);
    });
}

Value sub(Tape& t, Value a, Value b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    check_same_shape(av, bv, "sub");
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    auto bs = bv.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] - bs[i];
    return t.emit("sub", std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        accumulate(tp, a.id, go);
        if (tp.node_requires_grad(b.id)) {
            auto& gb = tp.node_grad(b.id);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
        }
    });
}

Value mul(Tape& t, Value a, Value b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    check_same_shape(av, bv, "mul");
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    auto bs = bv.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] * bs[i];
    return t.emit("mul", std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        const auto as2 = tp.node_value(a.id).f32();
        const auto bs2 = tp.node_value(b.id).f32();
        if (tp.node_requires_grad(a.id)) {
            auto& ga = tp.node_grad(a.id);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bs2[i];
        }
        if (tp.node_requires_grad(b.id)) {
            auto& gb = tp.node_grad(b.id);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * as2[i];
        }
    });
}

Value add_scalar(Tape& t, Value a, float s) {
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] + s;
    return t.emit("add_scalar", std::move(out), {a.id}, [a](Tape& tp, int self) {
        accumulate(tp, a.id, tp.node_grad_ref(self));
    });
}

Value scale(Tape& t, Value a, float s) {
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] * s;
    return t.emit("scale", std::move(out), {a.id}, [a, s](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(a.id)) return;
        auto& ga = tp.node_grad(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * s;
    });
}

Value square(Tape& t, Value a) {
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] * as[i];
    return t.emit("square", std::move(out), {a.id}, [a](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(a.id)) return;
        const auto as2 = tp.node_value(a.id).f32();
        auto& ga = tp.node_grad(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0f * as2[i] * go[i];
    });
}

Value rsqrt_shift(Tape& t, Value a, float shift) {
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 1.0f / std::sqrt(as[i] + shift);
    std::vector<float> saved(o.begin(), o.end());
    return t.emit("rsqrt_shift", std::move(out), {a.id},
                  [a, saved = std::move(saved)](Tape& tp, int self) {
                      const auto& go = tp.node_grad_ref(self);
                      if (!tp.node_requires_grad(a.id)) return;
                      auto& ga = tp.node_grad(a.id);
                      for (std::size_t i = 0; i < ga.size(); ++i) {
                          const float y = saved[i];
                          ga[i] += -0.5f * y * y * y * go[i];
                      }
                  });
}

Value relu(Tape& t, Value a) {
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.dims());
    auto o = out.f32();
    auto as = av.f32();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = as[i] > 0.0f ? as[i] : 0.0f;
    return t.emit("relu", std::move(out), {a.id}, [a](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(a.id)) return;
        const auto as2 = tp.node_value(a.id).f32();
        auto& ga = tp.node_grad(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (as2[i] > 0.0f) ga[i] += go[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

Value sum(Tape& t, Value a) {
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (float v : av.f32()) acc += v;
    return t.emit("sum", Tensor::scalar(static_cast<float>(acc)), {a.id},
                  [a](Tape& tp, int self) {
                      const float g = tp.node_grad_ref(self)[0];
                      if (!tp.node_requires_grad(a.id)) return;
                      auto& ga = tp.node_grad(a.id);
                      for (auto& v : ga) v += g;
                  });
}

Value l2_norm(Tape& t, Value a) {
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (float v : av.f32()) acc += static_cast<double>(v) * v;
    const float norm = static_cast<float>(std::sqrt(acc));
    return t.emit("l2_norm", Tensor::scalar(norm), {a.id}, [a, norm](Tape& tp, int self) {
        const float g = tp.node_grad_ref(self)[0];
        if (!tp.node_requires_grad(a.id) || norm <= 0.0f) return;
        const auto as = tp.node_value(a.id).f32();
        auto& ga = tp.node_grad(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * as[i] / norm;
    });
}

// ---------------------------------------------------------------------------
// Channel statistics / broadcasting

Value mean_channels(Tape& t, Value x) {
    const Tensor& xv = t.value(x);
    check_4d(xv, "mean_channels");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t denom = static_cast<int64_t>(n) * hw;
    Tensor out = Tensor::zeros({c});
    auto o = out.f32();
    const auto xs = xv.f32();
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const float* p = xs.data() + (static_cast<int64_t>(in) * c + ic) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += p[i];
            o[static_cast<std::size_t>(ic)] += static_cast<float>(acc / static_cast<double>(denom));
        }
    return t.emit("mean_channels", std::move(out), {x.id}, [x, n, c, hw, denom](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(x.id)) return;
        auto& gx = tp.node_grad(x.id);
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const float g = go[static_cast<std::size_t>(ic)] / static_cast<float>(denom);
                float* p = gx.data() + (static_cast<int64_t>(in) * c + ic) * hw;
                for (int64_t i = 0; i < hw; ++i) p[i] += g;
            }
    });
}

namespace {

enum class BcOp { add, sub, mul };

Value broadcast_impl(Tape& t, Value x, Value c, BcOp op, const char* name) {
    const Tensor& xv = t.value(x);
    const Tensor& cv = t.value(c);
    check_4d(xv, name);
    if (cv.ndim() != 1 || cv.dim(0) != xv.dim(1))
        throw ShapeError(std::string(name) + ": channel vector " + cv.shape_string() +
                         " does not match channel axis of " + xv.shape_string());
    const int n = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros(xv.dims());
    auto o = out.f32();
    const auto xs = xv.f32();
    const auto cs = cv.f32();
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < ch; ++ic) {
            const int64_t base = (static_cast<int64_t>(in) * ch + ic) * hw;
            const float cval = cs[static_cast<std::size_t>(ic)];
            switch (op) {
                case BcOp::add:
                    for (int64_t i = 0; i < hw; ++i) o[base + i] = xs[base + i] + cval;
                    break;
                case BcOp::sub:
                    for (int64_t i = 0; i < hw; ++i) o[base + i] = xs[base + i] - cval;
                    break;
                case BcOp::mul:
                    for (int64_t i = 0; i < hw; ++i) o[base + i] = xs[base + i] * cval;
                    break;
            }
        }
    return t.emit(name, std::move(out), {x.id, c.id}, [x, c, op, n, ch, hw](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        const auto xs2 = tp.node_value(x.id).f32();
        const auto cs2 = tp.node_value(c.id).f32();
        if (tp.node_requires_grad(x.id)) {
            auto& gx = tp.node_grad(x.id);
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < ch; ++ic) {
                    const int64_t base = (static_cast<int64_t>(in) * ch + ic) * hw;
                    if (op == BcOp::mul) {
                        const float cval = cs2[static_cast<std::size_t>(ic)];
                        for (int64_t i = 0; i < hw; ++i) gx[base + i] += go[base + i] * cval;
                    } else {
                        for (int64_t i = 0; i < hw; ++i) gx[base + i] += go[base + i];
                    }
                }
        }
        if (tp.node_requires_grad(c.id)) {
            auto& gc = tp.node_grad(c.id);
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < ch; ++ic) {
                    const int64_t base = (static_cast<int64_t>(in) * ch + ic) * hw;
                    double acc = 0.0;
                    if (op == BcOp::mul) {
                        for (int64_t i = 0; i < hw; ++i) acc += go[base + i] * xs2[base + i];
                    } else {
                        for (int64_t i = 0; i < hw; ++i) acc += go[base + i];
                    }
                    if (op == BcOp::sub)
                        gc[static_cast<std::size_t>(ic)] -= static_cast<float>(acc);
                    else
                        gc[static_cast<std::size_t>(ic)] += static_cast<float>(acc);
                }
        }
    });
}

}  // namespace

Value broadcast_add(Tape& t, Value x, Value c) { return broadcast_impl(t, x, c, BcOp::add, "broadcast_add"); }
Value broadcast_sub(Tape& t, Value x, Value c) { return broadcast_impl(t, x, c, BcOp::sub, "broadcast_sub"); }
Value broadcast_mul(Tape& t, Value x, Value c) { return broadcast_impl(t, x, c, BcOp::mul, "broadcast_mul"); }

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM per sample)

namespace {

struct ConvDims {
    int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
    int64_t ckk() const { return static_cast<int64_t>(cin) * kh * kw; }
    int64_t owo() const { return static_cast<int64_t>(ho) * wo; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_4d(x, "conv2d input");
    check_4d(w, "conv2d weight");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.cin)
        throw ShapeError("conv2d: channel axis mismatch, input has C=" + std::to_string(d.cin) +
                         " but weight expects C=" + std::to_string(w.dim(1)));
    if (b.ndim() != 1 || b.dim(0) != d.cout)
        throw ShapeError("conv2d: bias axis must be [Cout=" + std::to_string(d.cout) + "], got " +
                         b.shape_string());
    if (d.kh > d.h + 2 * pad)
        throw ShapeError("conv2d: kernel height " + std::to_string(d.kh) +
                         " exceeds padded input height " + std::to_string(d.h + 2 * pad));
    if (d.kw > d.w + 2 * pad)
        throw ShapeError("conv2d: kernel width " + std::to_string(d.kw) +
                         " exceeds padded input width " + std::to_string(d.w + 2 * pad));
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// Gather one sample's patches into col (ckk x ho*wo, row-major). Stride-1
// rows are contiguous spans and get memcpy'd.
void im2col(const float* x, const ConvDims& d, float* col) {
    const int64_t hw = static_cast<int64_t>(d.h) * d.w;
    const int64_t owo = d.owo();
    for (int c = 0; c < d.cin; ++c) {
        const float* xc = x + c * hw;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                float* row = col + ((static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj) * owo;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    float* dst = row + static_cast<int64_t>(oh) * d.wo;
                    if (ih < 0 || ih >= d.h) {
                        std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(d.wo));
                        continue;
                    }
                    if (d.stride == 1) {
                        const int iw0 = -d.pad + kj;
                        int lo = std::max(0, -iw0);
                        int hi = std::min(d.wo, d.w - iw0);
                        if (lo > 0) std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(lo));
                        if (hi < d.wo)
                            std::memset(dst + std::max(hi, 0), 0,
                                        sizeof(float) * static_cast<std::size_t>(d.wo - std::max(hi, 0)));
                        if (hi > lo)
                            std::memcpy(dst + lo, xc + static_cast<int64_t>(ih) * d.w + iw0 + lo,
                                        sizeof(float) * static_cast<std::size_t>(hi - lo));
                    } else {
                        for (int ow = 0; ow < d.wo; ++ow) {
                            const int iw = ow * d.stride - d.pad + kj;
                            dst[ow] = (iw >= 0 && iw < d.w) ? xc[static_cast<int64_t>(ih) * d.w + iw]
                                                            : 0.0f;
                        }
                    }
                }
            }
    }
}

// Scatter-add the transpose of im2col: col (ckk x ho*wo) back into gx.
void col2im_add(const float* col, const ConvDims& d, float* gx) {
    const int64_t hw = static_cast<int64_t>(d.h) * d.w;
    const int64_t owo = d.owo();
    for (int c = 0; c < d.cin; ++c) {
        float* xc = gx + c * hw;
        for (int ki = 0; ki < d.kh; ++ki)
            for (int kj = 0; kj < d.kw; ++kj) {
                const float* row = col + ((static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj) * owo;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.h) continue;
                    const float* src = row + static_cast<int64_t>(oh) * d.wo;
                    for (int ow = 0; ow < d.wo; ++ow) {
                        const int iw = ow * d.stride - d.pad + kj;
                        if (iw >= 0 && iw < d.w) xc[static_cast<int64_t>(ih) * d.w + iw] += src[ow];
                    }
                }
            }
    }
}

}  // namespace

Value conv2d(Tape& t, Value x, Value w, Value b, int stride, int pad) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    const ConvDims d = conv_dims(xv, wv, bv, stride, pad);

    Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});
    {
        std::vector<float> col(static_cast<std::size_t>(d.ckk() * d.owo()));
        const auto xs = xv.f32();
        auto os = out.f32();
        MapC wmat(wv.f32().data(), d.cout, d.ckk());
        MapC bm(bv.f32().data(), d.cout, 1);
        for (int n = 0; n < d.n; ++n) {
            im2col(xs.data() + static_cast<int64_t>(n) * d.cin * d.h * d.w, d, col.data());
            MapC cm(col.data(), d.ckk(), d.owo());
            MapM ym(os.data() + static_cast<int64_t>(n) * d.cout * d.owo(), d.cout, d.owo());
            ym.noalias() = wmat * cm;
            ym.colwise() += bm.col(0);
        }
    }

    return t.emit("conv2d", std::move(out), {x.id, w.id, b.id}, [x, w, b, d](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        const Tensor& xv2 = tp.node_value(x.id);
        const Tensor& wv2 = tp.node_value(w.id);
        const bool need_x = tp.node_requires_grad(x.id);
        const bool need_w = tp.node_requires_grad(w.id);
        const bool need_b = tp.node_requires_grad(b.id);
        std::vector<float> col(static_cast<std::size_t>(d.ckk() * d.owo()));
        std::vector<float> gcol(need_x ? col.size() : 0);
        const auto xs = xv2.f32();
        MapC wmat(wv2.f32().data(), d.cout, d.ckk());
        for (int n = 0; n < d.n; ++n) {
            MapC gym(go.data() + static_cast<int64_t>(n) * d.cout * d.owo(), d.cout, d.owo());
            if (need_w || need_b) {
                if (need_w) {
                    im2col(xs.data() + static_cast<int64_t>(n) * d.cin * d.h * d.w, d, col.data());
                    MapC cm(col.data(), d.ckk(), d.owo());
                    MapM gwm(tp.node_grad(w.id).data(), d.cout, d.ckk());
                    gwm.noalias() += gym * cm.transpose();
                }
                if (need_b) {
                    auto& gb = tp.node_grad(b.id);
                    for (int co = 0; co < d.cout; ++co) gb[static_cast<std::size_t>(co)] += gym.row(co).sum();
                }
            }
            if (need_x) {
                MapM gcm(gcol.data(), d.ckk(), d.owo());
                gcm.noalias() = wmat.transpose() * gym;
                col2im_add(gcol.data(), d,
                           tp.node_grad(x.id).data() + static_cast<int64_t>(n) * d.cin * d.h * d.w);
            }
        }
    });
}

Value linear(Tape& t, Value x, Value w, Value b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.ndim() != 2) throw ShapeError("linear: input must be [N,F], got " + xv.shape_string());
    if (wv.ndim() != 2) throw ShapeError("linear: weight must be [out,F], got " + wv.shape_string());
    const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
    if (wv.dim(1) != f)
        throw ShapeError("linear: feature axis mismatch, input has F=" + std::to_string(f) +
                         " but weight expects F=" + std::to_string(wv.dim(1)));
    if (bv.ndim() != 1 || bv.dim(0) != o)
        throw ShapeError("linear: bias axis must be [out=" + std::to_string(o) + "], got " +
                         bv.shape_string());

    Tensor out = Tensor::zeros({n, o});
    {
        MapC xm(xv.f32().data(), n, f);
        MapC wm(wv.f32().data(), o, f);
        MapM ym(out.f32().data(), n, o);
        ym.noalias() = xm * wm.transpose();
        MapC bm(bv.f32().data(), 1, o);
        ym.rowwise() += bm.row(0);
    }
    return t.emit("linear", std::move(out), {x.id, w.id, b.id}, [x, w, b, n, f, o](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        MapC gym(go.data(), n, o);
        if (tp.node_requires_grad(x.id)) {
            MapC wm(tp.node_value(w.id).f32().data(), o, f);
            MapM gxm(tp.node_grad(x.id).data(), n, f);
            gxm.noalias() += gym * wm;
        }
        if (tp.node_requires_grad(w.id)) {
            MapC xm(tp.node_value(x.id).f32().data(), n, f);
            MapM gwm(tp.node_grad(w.id).data(), o, f);
            gwm.noalias() += gym.transpose() * xm;
        }
        if (tp.node_requires_grad(b.id)) {
            auto& gb = tp.node_grad(b.id);
            for (int j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += gym.col(j).sum();
        }
    });
}

// ---------------------------------------------------------------------------
// Pooling

namespace {

struct PoolDims {
    int n, c, h, w, k, stride, ho, wo;
};

PoolDims pool_dims(const Tensor& x, int k, int stride, const char* op) {
    check_4d(x, op);
    if (k < 1 || stride < 1) throw ShapeError(std::string(op) + ": window and stride must be >= 1");
    PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, stride, 0, 0};
    if (d.h < k || d.w < k)
        throw ShapeError(std::string(op) + ": window " + std::to_string(k) + " exceeds input " +
                         std::to_string(d.h) + "x" + std::to_string(d.w));
    d.ho = (d.h - k) / stride + 1;
    d.wo = (d.w - k) / stride + 1;
    return d;
}

}  // namespace

Value maxpool2d(Tape& t, Value x, int k, int stride) {
    const Tensor& xv = t.value(x);
    const PoolDims d = pool_dims(xv, k, stride, "maxpool2d");
    Tensor out = Tensor::zeros({d.n, d.c, d.ho, d.wo});
    std::vector<int64_t> argmax(static_cast<std::size_t>(out.numel()));
    auto os = out.f32();
    const auto xs = xv.f32();
    int64_t oi = 0;
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c) {
            const int64_t base = (static_cast<int64_t>(n) * d.c + c) * d.h * d.w;
            for (int oh = 0; oh < d.ho; ++oh)
                for (int ow = 0; ow < d.wo; ++ow, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    int64_t best_idx = -1;
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            const int ih = oh * stride + ki;
                            const int iw = ow * stride + kj;
                            const int64_t idx = base + static_cast<int64_t>(ih) * d.w + iw;
                            if (xs[idx] > best) {  // ties: first window element wins
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    os[oi] = best;
                    argmax[static_cast<std::size_t>(oi)] = best_idx;
                }
        }
    return t.emit("maxpool2d", std::move(out), {x.id},
                  [x, argmax = std::move(argmax)](Tape& tp, int self) {
                      const auto& go = tp.node_grad_ref(self);
                      if (!tp.node_requires_grad(x.id)) return;
                      auto& gx = tp.node_grad(x.id);
                      for (std::size_t i = 0; i < argmax.size(); ++i)
                          gx[static_cast<std::size_t>(argmax[i])] += go[i];
                  });
}

Value avgpool2d(Tape& t, Value x, int k, int stride) {
    const Tensor& xv = t.value(x);
    const PoolDims d = pool_dims(xv, k, stride, "avgpool2d");
    Tensor out = Tensor::zeros({d.n, d.c, d.ho, d.wo});
    auto os = out.f32();
    const auto xs = xv.f32();
    const float inv = 1.0f / static_cast<float>(k * k);
    int64_t oi = 0;
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c) {
            const int64_t base = (static_cast<int64_t>(n) * d.c + c) * d.h * d.w;
            for (int oh = 0; oh < d.ho; ++oh)
                for (int ow = 0; ow < d.wo; ++ow, ++oi) {
                    float acc = 0.0f;
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj)
                            acc += xs[base + static_cast<int64_t>(oh * stride + ki) * d.w +
                                      (ow * stride + kj)];
                    os[oi] = acc * inv;
                }
        }
    return t.emit("avgpool2d", std::move(out), {x.id}, [x, d, inv](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(x.id)) return;
        auto& gx = tp.node_grad(x.id);
        int64_t oi = 0;
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.c; ++c) {
                const int64_t base = (static_cast<int64_t>(n) * d.c + c) * d.h * d.w;
                for (int oh = 0; oh < d.ho; ++oh)
                    for (int ow = 0; ow < d.wo; ++ow, ++oi) {
                        const float g = go[static_cast<std::size_t>(oi)] * inv;
                        for (int ki = 0; ki < d.k; ++ki)
                            for (int kj = 0; kj < d.k; ++kj)
                                gx[static_cast<std::size_t>(
                                    base + static_cast<int64_t>(oh * d.stride + ki) * d.w +
                                    (ow * d.stride + kj))] += g;
                    }
            }
    });
}

Value spatial_mean(Tape& t, Value x) {
    const Tensor& xv = t.value(x);
    check_4d(xv, "spatial_mean");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros({n, c});
    auto os = out.f32();
    const auto xs = xv.f32();
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        double acc = 0.0;
        const float* p = xs.data() + nc * hw;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
        os[static_cast<std::size_t>(nc)] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return t.emit("spatial_mean", std::move(out), {x.id}, [x, n, c, hw](Tape& tp, int self) {
        const auto& go = tp.node_grad_ref(self);
        if (!tp.node_requires_grad(x.id)) return;
        auto& gx = tp.node_grad(x.id);
        for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
            const float g = go[static_cast<std::size_t>(nc)] / static_cast<float>(hw);
            float* p = gx.data() + nc * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
    });
}

Value flatten2(Tape& t, Value x) {
    const Tensor& xv = t.value(x);
    if (xv.ndim() < 2)
        throw ShapeError("flatten2: input must have at least 2 axes, got " + xv.shape_string());
    const int n = xv.dim(0);
    const int rest = static_cast<int>(xv.numel() / n);
    Tensor out = xv.reshaped({n, rest});
    return t.emit("flatten2", std::move(out), {x.id}, [x](Tape& tp, int self) {
        accumulate(tp, x.id, tp.node_grad_ref(self));
    });
}

// ---------------------------------------------------------------------------
// Losses

Value softmax_cross_entropy(Tape& t, Value logits, const std::vector<int>& labels) {
    const Tensor& zv = t.value(logits);
    if (zv.ndim() != 2)
        throw ShapeError("softmax_cross_entropy: logits must be [N,K], got " + zv.shape_string());
    const int n = zv.dim(0), k = zv.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(n));
    for (int i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
            throw ContractError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                                " out of range [0," + std::to_string(k) + ") at row " +
                                std::to_string(i));

    const auto zs = zv.f32();
    std::vector<float> probs(static_cast<std::size_t>(n) * k);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* z = zs.data() + static_cast<int64_t>(i) * k;
        float zmax = z[0];
        for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
        const double lse = zmax + std::log(denom);
        for (int j = 0; j < k; ++j)
            probs[static_cast<std::size_t>(i) * k + j] =
                static_cast<float>(std::exp(static_cast<double>(z[j]) - lse));
        loss += lse - z[labels[static_cast<std::size_t>(i)]];
    }
    loss /= n;
    auto labels_copy = labels;
    return t.emit("softmax_ce", Tensor::scalar(static_cast<float>(loss)), {logits.id},
                  [logits, n, k, probs = std::move(probs),
                   labels = std::move(labels_copy)](Tape& tp, int self) {
                      const float g = tp.node_grad_ref(self)[0] / static_cast<float>(n);
                      if (!tp.node_requires_grad(logits.id)) return;
                      auto& gz = tp.node_grad(logits.id);
                      for (int i = 0; i < n; ++i)
                          for (int j = 0; j < k; ++j) {
                              const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                              const float onehot = (j == labels[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
                              gz[idx] += g * (probs[idx] - onehot);
                          }
                  });
}

Value kl_divergence(Tape& t, Value logits, const Tensor& target_probs) {
    const Tensor& zv = t.value(logits);
    if (zv.ndim() != 2)
        throw ShapeError("kl_divergence: logits must be [N,K], got " + zv.shape_string());
    check_same_shape(zv, target_probs, "kl_divergence");
    const int n = zv.dim(0), k = zv.dim(1);
    const auto zs = zv.f32();
    const auto ps = target_probs.f32();
    std::vector<float> q(static_cast<std::size_t>(n) * k);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* z = zs.data() + static_cast<int64_t>(i) * k;
        float zmax = z[0];
        for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
        const double lse = zmax + std::log(denom);
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * k + j;
            const double logq = static_cast<double>(z[j]) - lse;
            q[idx] = static_cast<float>(std::exp(logq));
            const double p = ps[idx];
            if (p > 0.0) loss += p * (std::log(p) - logq);
        }
    }
    loss /= n;
    Tensor target_copy = target_probs.clone();
    return t.emit("kl_divergence", Tensor::scalar(static_cast<float>(loss)), {logits.id},
                  [logits, n, k, q = std::move(q), target = std::move(target_copy)](Tape& tp, int self) {
                      const float g = tp.node_grad_ref(self)[0] / static_cast<float>(n);
                      if (!tp.node_requires_grad(logits.id)) return;
                      auto& gz = tp.node_grad(logits.id);
                      const auto ps2 = target.f32();
                      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * (q[i] - ps2[i]);
                  });
}

Value quantize_half(Tape& t, Value x) {
    const Tensor& xv = t.value(x);
    Tensor out = Tensor::zeros(xv.dims());
    auto os = out.f32();
    const auto xs = xv.f32();
    int64_t overflows = 0;
    for (std::size_t i = 0; i < os.size(); ++i) {
        os[i] = half_round_trip(xs[i]);
        if (std::isfinite(xs[i]) && !std::isfinite(os[i])) ++overflows;
    }
    if (overflows > 0) t.note_overflow(overflows);
    return t.emit("quantize_half", std::move(out), {x.id}, [x](Tape& tp, int self) {
        // Straight-through: rounding is piecewise constant, gradients pass
        // unchanged and stay full32.
        accumulate(tp, x.id, tp.node_grad_ref(self));
    });
}

// ---------------------------------------------------------------------------
// Non-tape helpers

Tensor softmax(const Tensor& logits, float temperature) {
    if (logits.ndim() != 2)
        throw ShapeError("softmax: logits must be [N,K], got " + logits.shape_string());
    if (!(temperature > 0.0f)) throw ContractError("softmax: temperature must be > 0");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out = Tensor::zeros(logits.dims());
    auto os = out.f32();
    for (int i = 0; i < n; ++i) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j)
            zmax = std::max(zmax, static_cast<double>(logits.at(static_cast<int64_t>(i) * k + j)) /
                                       temperature);
        double denom = 0.0;
        for (int j = 0; j < k; ++j)
            denom += std::exp(static_cast<double>(logits.at(static_cast<int64_t>(i) * k + j)) /
                                  temperature -
                              zmax);
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * k + j;
            os[idx] = static_cast<float>(
                std::exp(static_cast<double>(logits.at(static_cast<int64_t>(idx))) / temperature -
                         zmax) /
                denom);
        }
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2)
        throw ShapeError("argmax_rows: input must be [N,K], got " + logits.shape_string());
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        float bv = logits.at(static_cast<int64_t>(i) * k);
        for (int j = 1; j < k; ++j) {
            const float v = logits.at(static_cast<int64_t>(i) * k + j);
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace resmatch::ops
