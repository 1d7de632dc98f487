#include "resmatch/recovery.hpp"

#include <cmath>

#include "resmatch/errors.hpp"
#include "resmatch/ops.hpp"

namespace resmatch {

AdamState AdamState::for_shape(const std::vector<int>& dims, float lr, float beta1, float beta2,
                               float eps) {
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.reset_for_shape(dims);
    return s;
}

void AdamState::reset_for_shape(const std::vector<int>& new_dims) {
    dims = new_dims;
    const auto n = static_cast<std::size_t>(numel_of(dims));
    m.assign(n, 0.0f);
    v.assign(n, 0.0f);
    step_count = 0;
}

RecoveryResult recovery_loss(const std::vector<const TrainedModel*>& teachers, const Tensor& x,
                             const std::vector<int>& labels, float lambda,
                             const PrecisionPolicy& policy) {
    if (teachers.empty()) throw ContractError("recovery_loss: need at least one teacher");
    if (x.ndim() != 4)
        throw ShapeError("recovery_loss: x must be [N,C,H,W], got " + x.shape_string());
    if (x.dim(0) < 2)
        throw ContractError("recovery_loss: batch size must be >= 2 for train-mode BN statistics");
    if (static_cast<int>(labels.size()) != x.dim(0))
        throw ContractError("recovery_loss: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(x.dim(0)));
    if (!(lambda >= 0.0f)) throw ContractError("recovery_loss: lambda must be >= 0");

    // Make sure the teachers match the policy's parameter precision; the
    // cast is per call, so hot loops should pass pre-cast models.
    std::vector<TrainedModel> casted;
    casted.reserve(teachers.size());  // pointer stability across push_back
    std::vector<const TrainedModel*> effective(teachers.begin(), teachers.end());
    for (auto& teacher : effective) {
        if (teacher->param_precision() != policy.params) {
            casted.push_back(teacher->cast_params(policy.params));
            teacher = &casted.back();
        }
    }

    Tape tape;
    Tensor xt = x;
    xt.zero_grad();
    Value xv = tape.leaf(xt, /*requires_grad=*/true);

    ForwardOptions opts;
    opts.mode = RunMode::train;
    opts.policy = policy;

    RecoveryResult res;
    res.report.precision_mode = policy.mode_name();

    const bool half_ce = policy.logits_and_ce == Precision::half16;
    Value total_acc;
    double ce_sum = 0.0, dg_sum = 0.0;
    for (std::size_t ti = 0; ti < effective.size(); ++ti) {
        const TrainedModel& teacher = *effective[ti];
        ForwardValues fv = forward_model(tape, teacher, xv, opts);
        Value ce = ops::softmax_cross_entropy(tape, fv.logits, labels);
        if (half_ce) ce = ops::quantize_half(tape, ce);

        Value dg;
        bool have_dg = false;
        for (const auto& st : fv.bn_stats) {
            Value dm = ops::l2_norm(
                tape, ops::sub(tape, st.mean, tape.constant(st.bn->running_mean)));
            Value dv = ops::l2_norm(tape, ops::sub(tape, st.var, tape.constant(st.bn->running_var)));
            res.report.layers.push_back({static_cast<int>(ti), st.layer, tape.value(dm).at(0),
                                         tape.value(dv).at(0)});
            Value pair = ops::add(tape, dm, dv);
            dg = have_dg ? ops::add(tape, dg, pair) : pair;
            have_dg = true;
        }

        const float ce_val = tape.value(ce).at(0);
        const float dg_val = have_dg ? tape.value(dg).at(0) : 0.0f;
        if (!std::isfinite(ce_val)) throw NumericError("ce", policy.mode_name());
        if (!std::isfinite(dg_val)) throw NumericError("d_global", policy.mode_name());
        ce_sum += ce_val;
        dg_sum += dg_val;

        Value total_t = (lambda == 0.0f || !have_dg)
                            ? ce
                            : ops::add(tape, ce, ops::scale(tape, dg, lambda));
        total_acc = (ti == 0) ? total_t : ops::add(tape, total_acc, total_t);
    }
    if (effective.size() > 1)
        total_acc = ops::scale(tape, total_acc, 1.0f / static_cast<float>(effective.size()));

    tape.backward(total_acc);

    res.report.total = tape.value(total_acc).at(0);
    res.report.ce = static_cast<float>(ce_sum / static_cast<double>(effective.size()));
    res.report.d_global = static_cast<float>(dg_sum / static_cast<double>(effective.size()));
    res.report.precision_overflows = tape.overflow_count();
    if (!std::isfinite(res.report.total)) throw NumericError("total", policy.mode_name());

    res.grad = Tensor::from(x.dims(), xt.grad());
    return res;
}

void grad_step(Tensor& x, const Tensor& grad, AdamState& state) {
    if (x.dims() != grad.dims())
        throw ShapeError("grad_step: x " + x.shape_string() + " and grad " + grad.shape_string() +
                         " differ");
    if (x.dims() != state.dims)
        throw ContractError("grad_step: optimizer state was initialized for a different shape");
    if (!all_finite(grad)) throw NumericError("grad", "full32");

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));

    auto xs = x.f32();
    const auto gs = grad.f32();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const float g = gs[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0f - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0f - state.beta2) * g * g;
        const float mhat = state.m[i] / bc1;
        const float vhat = state.v[i] / bc2;
        xs[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace resmatch
