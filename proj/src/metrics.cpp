#include "resmatch/metrics.hpp"

#include <cmath>

#include "resmatch/errors.hpp"
#include "resmatch/ops.hpp"

namespace resmatch {

namespace {

double histogram_entropy_bits(const float* values, int64_t count, int bins) {
    float lo = values[0], hi = values[0];
    for (int64_t i = 1; i < count; ++i) {
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
    }
    if (!(hi > lo)) return 0.0;  // single support point
    std::vector<int64_t> hist(static_cast<std::size_t>(bins), 0);
    const double scale = static_cast<double>(bins) / (static_cast<double>(hi) - lo);
    for (int64_t i = 0; i < count; ++i) {
        int b = static_cast<int>((static_cast<double>(values[i]) - lo) * scale);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        ++hist[static_cast<std::size_t>(b)];
    }
    double entropy = 0.0;
    for (int64_t h : hist) {
        if (h == 0) continue;
        const double p = static_cast<double>(h) / static_cast<double>(count);
        entropy -= p * std::log2(p);
    }
    return entropy;
}

}  // namespace

double pixel_entropy(const Tensor& images, int bins) {
    if (images.ndim() != 4)
        throw ShapeError("pixel_entropy: expected [N,C,H,W], got " + images.shape_string());
    if (images.dim(0) < 1) throw ContractError("pixel_entropy: empty batch");
    if (bins < 2) throw ContractError("pixel_entropy: bins must be >= 2");
    const int n = images.dim(0), c = images.dim(1);
    const int64_t hw = static_cast<int64_t>(images.dim(2)) * images.dim(3);
    const auto data = images.f32();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double image_bits = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const float* p = data.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            image_bits += histogram_entropy_bits(p, hw, bins);
        }
        total += image_bits / static_cast<double>(c);
    }
    return total / static_cast<double>(n);
}

double feature_entropy(const TrainedModel& model, const Tensor& images) {
    constexpr int kBins = 64;
    Tensor feats = eval_features(model, images);
    const int n = feats.dim(0), f = feats.dim(1);
    // Column-major gather per dimension.
    std::vector<float> column(static_cast<std::size_t>(n));
    const auto data = feats.f32();
    double total = 0.0;
    for (int j = 0; j < f; ++j) {
        for (int i = 0; i < n; ++i)
            column[static_cast<std::size_t>(i)] = data[static_cast<std::size_t>(i) * f + j];
        total += histogram_entropy_bits(column.data(), n, kBins);
    }
    return total / static_cast<double>(f);
}

double mro_cost_ratio(int budget, int arc_count, int stage_steps, double r) {
    if (!(r > 0.0)) throw ContractError("mro_cost_ratio: r must be > 0");
    if (r > 1.0) throw ContractError("mro_cost_ratio: r must be <= 1");
    if (budget < 1 || stage_steps < 0 || arc_count < 0)
        throw ContractError("mro_cost_ratio: invalid schedule");
    if (static_cast<int64_t>(stage_steps) * arc_count > budget)
        throw ContractError("mro_cost_ratio: b*k exceeds the budget");
    const double half_stages = std::ceil(static_cast<double>(arc_count) / 2.0);
    return 1.0 - (static_cast<double>(stage_steps) / static_cast<double>(budget)) *
                     (half_stages * (1.0 - r));
}

int64_t count_flops(const TrainedModel& model, int h, int w) {
    int64_t macs = 0;
    int ch = model.spec.in_channels;
    for (const auto& layer : model.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            const int ho = (h + 2 * conv->pad - conv->k) / conv->stride + 1;
            const int wo = (w + 2 * conv->pad - conv->k) / conv->stride + 1;
            macs += static_cast<int64_t>(conv->out_ch) * ho * wo * conv->in_ch * conv->k * conv->k;
            h = ho;
            w = wo;
            ch = conv->out_ch;
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
            h = (h - pool->k) / pool->stride + 1;
            w = (w - pool->k) / pool->stride + 1;
        } else if (std::holds_alternative<GlobalPoolLayer>(layer)) {
            h = 1;
            w = 1;
        } else if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            macs += static_cast<int64_t>(lin->out_f) * lin->in_f;
        }
    }
    (void)ch;
    return macs;
}

CostReport mro_cost_report(const TrainedModel& model, int budget, int arc_count, int d_ds,
                           int d_orig) {
    if (budget < arc_count + 1)
        throw ContractError("mro_cost_report: budget must be >= arc_count+1");
    CostReport rep;
    rep.budget = budget;
    rep.arc_count = arc_count;
    rep.stage_steps = budget / (arc_count + 1);
    rep.r = std::pow(static_cast<double>(d_ds) / static_cast<double>(d_orig), 2.0);
    rep.analytic_ratio = mro_cost_ratio(budget, arc_count, rep.stage_steps, rep.r);

    const int64_t f_ds = count_flops(model, d_ds, d_ds);
    const int64_t f_orig = count_flops(model, d_orig, d_orig);
    // Stage i runs at D_ds for odd i (the schedule starts downsampled and
    // toggles after every b steps); the remainder stage follows the last
    // toggle.
    int64_t mro = 0;
    int res_is_ds = 1;
    for (int i = 1; i <= arc_count; ++i) {
        mro += static_cast<int64_t>(rep.stage_steps) * (res_is_ds ? f_ds : f_orig);
        res_is_ds = 1 - res_is_ds;
    }
    const int final_steps = budget - arc_count * rep.stage_steps;
    mro += static_cast<int64_t>(final_steps) * (res_is_ds ? f_ds : f_orig);
    rep.measured_flops_mro = mro;
    rep.measured_flops_baseline = static_cast<int64_t>(budget) * f_orig;
    rep.measured_ratio =
        static_cast<double>(rep.measured_flops_mro) / static_cast<double>(rep.measured_flops_baseline);
    return rep;
}

EntropyBound entropy_bound(const TrainedModel& model, const Tensor& dataset_images, int set_size) {
    if (dataset_images.ndim() != 4 || dataset_images.dim(0) < 1)
        throw ContractError("entropy_bound: dataset must be a nonempty [N,C,H,W] batch");
    Tensor logits = eval_logits(model, dataset_images);
    Tensor probs = ops::softmax(logits);
    const int n = probs.dim(0), k = probs.dim(1);
    double h_max = 0.0;
    for (int i = 0; i < n; ++i) {
        double h = 0.0;
        for (int j = 0; j < k; ++j) {
            const double p = probs.at(static_cast<int64_t>(i) * k + j);
            if (p > 0.0) h -= p * std::log(p);
        }
        h_max = std::max(h_max, h);
    }
    EntropyBound out;
    out.h_max_nats = h_max;
    out.bound_nats = static_cast<double>(set_size) * h_max;
    return out;
}

}  // namespace resmatch
