#pragma once

#include "resmatch/data.hpp"
#include "resmatch/model.hpp"

namespace resmatch {

// Mean per-image Shannon entropy in bits: per channel, histogram over the
// channel's [min,max] range, entropy averaged over channels then images.
// 0*log0 := 0; a constant channel contributes 0 bits.
double pixel_entropy(const Tensor& images, int bins);

// Histogram entropy of the pooled penultimate activations: 64 bins per
// feature dimension over the observed range, bits, averaged across
// dimensions. An operationalized estimator pinned as a regression metric.
double feature_entropy(const TrainedModel& model, const Tensor& images);

// Normalized cost of the alternating-resolution schedule:
//   1 - (b/B) * ceil(k/2) * (1 - r),   r = (D_ds/D_orig)^2.
double mro_cost_ratio(int budget, int arc_count, int stage_steps, double r);

// Analytic multiply-accumulate count of conv + linear layers for one
// sample at the given input resolution.
int64_t count_flops(const TrainedModel& model, int h, int w);

struct CostReport {
    int budget = 0;
    int arc_count = 0;
    int stage_steps = 0;  // b
    double r = 1.0;
    double analytic_ratio = 1.0;
    int64_t measured_flops_mro = 0;
    int64_t measured_flops_baseline = 0;
    double measured_ratio = 1.0;
};

// Evaluates both sides: the closed-form ratio and the per-resolution MAC
// counts accumulated over the actual stage schedule.
CostReport mro_cost_report(const TrainedModel& model, int budget, int arc_count, int d_ds,
                           int d_orig);

struct EntropyBound {
    double h_max_nats = 0.0;  // max per-sample output entropy over the dataset
    double bound_nats = 0.0;  // set_size * h_max
};

EntropyBound entropy_bound(const TrainedModel& model, const Tensor& dataset_images, int set_size);

}  // namespace resmatch
