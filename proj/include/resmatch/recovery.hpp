#pragma once

#include <span>
#include <vector>

#include "resmatch/model.hpp"
#include "resmatch/tensor.hpp"

namespace resmatch {

// Adam moment buffers for one synthetic batch. Reset whenever the image
// shape changes (a resolution toggle makes carrying moments ill-defined).
struct AdamState {
    std::vector<int> dims;
    std::vector<float> m, v;  // full32
    int64_t step_count = 0;
    float lr = 0.25f;
    float beta1 = 0.5f;
    float beta2 = 0.9f;
    float eps = 1e-8f;

    static AdamState for_shape(const std::vector<int>& dims, float lr = 0.25f, float beta1 = 0.5f,
                               float beta2 = 0.9f, float eps = 1e-8f);
    void reset_for_shape(const std::vector<int>& dims);
};

struct LayerResidual {
    int teacher;
    std::string layer;
    float mean_residual;  // ||mu_l(x) - BN_RM_l||_2
    float var_residual;   // ||var_l(x) - BN_RV_l||_2
};

struct RecoveryLossReport {
    float total = 0.0f;
    float ce = 0.0f;        // mean over teachers
    float d_global = 0.0f;  // mean over teachers
    std::vector<LayerResidual> layers;
    int64_t precision_overflows = 0;
    const char* precision_mode = "full32";
};

struct RecoveryResult {
    RecoveryLossReport report;
    Tensor grad;  // d total / d x, full32
};

// One evaluation of the recovery objective: batch-mean cross-entropy to the
// target labels plus lambda times the BN-statistics divergence, averaged
// over teachers, with the gradient w.r.t. the pixels. CE and logits follow
// the precision policy; the divergence and the returned gradient are
// full32. Teachers whose parameter precision differs from the policy are
// cast on the fly; pre-cast them when calling in a loop.
RecoveryResult recovery_loss(const std::vector<const TrainedModel*>& teachers, const Tensor& x,
                             const std::vector<int>& labels, float lambda,
                             const PrecisionPolicy& policy);

// Standard Adam step with bias correction; x and state update in place.
// No pixel clamping here (export applies the range projection).
void grad_step(Tensor& x, const Tensor& grad, AdamState& state);

}  // namespace resmatch
