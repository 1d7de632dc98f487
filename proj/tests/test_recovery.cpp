#include <cmath>

#include "doctest.h"
#include "resmatch/errors.hpp"
#include "resmatch/ops.hpp"
#include "resmatch/recovery.hpp"
#include "support.hpp"

using namespace resmatch;

namespace {

// conv1x1(identity) -> BN -> GAP -> fc toy teacher with hand-set running
// statistics; BN sees exactly the input batch.
TrainedModel toy_bn_teacher(float running_mean, float running_var) {
    TrainedModel m;
    m.spec.arch = Arch::cnn_s;
    m.spec.in_channels = 1;
    m.spec.in_h = 1;
    m.spec.in_w = 1;
    m.spec.num_classes = 2;

    Conv2dLayer conv;
    conv.name = "c1";
    conv.in_ch = 1;
    conv.out_ch = 1;
    conv.k = 1;
    conv.stride = 1;
    conv.pad = 0;
    conv.weight = Tensor::from({1, 1, 1, 1}, {1.0f});
    conv.bias = Tensor::zeros({1});
    m.layers.emplace_back(std::move(conv));

    BatchNormLayer bn;
    bn.name = "b1";
    bn.channels = 1;
    bn.gamma = Tensor::full({1}, 1.0f);
    bn.beta = Tensor::zeros({1});
    bn.running_mean = Tensor::from({1}, {running_mean});
    bn.running_var = Tensor::from({1}, {running_var});
    m.layers.emplace_back(std::move(bn));

    m.layers.emplace_back(GlobalPoolLayer{"gap"});

    LinearLayer fc;
    fc.name = "fc";
    fc.in_f = 1;
    fc.out_f = 2;
    fc.weight = Tensor::from({2, 1}, {1.0f, -1.0f});
    fc.bias = Tensor::zeros({2});
    m.layers.emplace_back(std::move(fc));
    return m;
}

// Minimizes the BN divergence alone to construct a batch whose statistics
// match the running statistics at every layer.
Tensor optimize_probe(const TrainedModel& teacher, Tensor probe, int max_steps, double target) {
    AdamState st = AdamState::for_shape(probe.dims(), 0.05f, 0.9f, 0.999f, 1e-8f);
    for (int step = 0; step < max_steps; ++step) {
        Tape tape;
        probe.zero_grad();
        Value xv = tape.leaf(probe, true);
        ForwardOptions opts;
        opts.mode = RunMode::train;
        ForwardValues fv = forward_model(tape, teacher, xv, opts);
        Value dg;
        bool have = false;
        for (const auto& bn : fv.bn_stats) {
            Value dm = ops::l2_norm(tape, ops::sub(tape, bn.mean, tape.constant(bn.bn->running_mean)));
            Value dv = ops::l2_norm(tape, ops::sub(tape, bn.var, tape.constant(bn.bn->running_var)));
            Value pair = ops::add(tape, dm, dv);
            dg = have ? ops::add(tape, dg, pair) : pair;
            have = true;
        }
        const double val = tape.value(dg).at(0);
        if (val < target) break;
        tape.backward(dg);
        Tensor grad = Tensor::from(probe.dims(), probe.grad());
        st.lr = 0.05f * 0.5f * (1.0f + std::cos(3.14159265f * step / max_steps));
        grad_step(probe, grad, st);
    }
    return probe;
}

}  // namespace

TEST_CASE("lambda zero makes the total exactly the cross-entropy") {
    TrainedModel teacher = toy_bn_teacher(0.5f, 2.0f);
    Tensor x = testsupport::random_tensor({4, 1, 1, 1}, 3);
    RecoveryResult r = recovery_loss({{&teacher}}, x, {0, 1, 0, 1}, 0.0f, {});
    CHECK(r.report.total == r.report.ce);
    CHECK(r.report.d_global >= 0.0f);
}

TEST_CASE("d_global matches hand arithmetic on the toy teacher") {
    TrainedModel teacher = toy_bn_teacher(0.5f, 2.0f);
    Tensor x = Tensor::from({4, 1, 1, 1}, {0.1f, 0.3f, 0.5f, 0.9f});
    RecoveryResult r = recovery_loss({{&teacher}}, x, {0, 0, 1, 1}, 1.0f, {});

    // Batch statistics over the four values, biased variance.
    double mu = 0.0;
    for (float v : {0.1f, 0.3f, 0.5f, 0.9f}) mu += v;
    mu /= 4.0;
    double var = 0.0;
    for (float v : {0.1f, 0.3f, 0.5f, 0.9f}) var += (v - mu) * (v - mu);
    var /= 4.0;
    const double want = std::fabs(mu - 0.5) + std::fabs(var - 2.0);
    CHECK(std::fabs(r.report.d_global - want) < 1e-6);
    CHECK(std::fabs(r.report.total - (r.report.ce + 1.0f * r.report.d_global)) < 1e-6);
    REQUIRE(r.report.layers.size() == 1);
    CHECK(r.report.layers[0].layer == "b1");
}

TEST_CASE("report invariant: total = ce + lambda*d_global within 1e-6") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 4, 2);
    Tensor x = testsupport::random_tensor({4, 3, 32, 32}, 9);
    for (float lambda : {0.0f, 0.5f, 1.0f, 2.0f}) {
        RecoveryResult r = recovery_loss({{&teacher}}, x, {0, 1, 2, 0}, lambda, {});
        CHECK(std::fabs(r.report.total - (r.report.ce + lambda * r.report.d_global)) <
              1e-6 * std::max(1.0f, r.report.total));
        CHECK(r.report.d_global >= 0.0f);
    }
}

TEST_CASE("optimized probe batch aligns every BN layer with its running stats") {
    DatasetPair data = testsupport::shapes_dataset();
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 12, 3);

    // Start from real images: their statistics are already close.
    Tensor probe = Tensor::zeros({8, 3, 32, 32});
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) {
        put_sample(probe, i, take_sample(data.train.images, i * 37));
        labels.push_back(data.train.labels[static_cast<std::size_t>(i * 37)]);
    }
    probe = optimize_probe(teacher, probe, 3000, 3e-5);

    RecoveryResult r = recovery_loss({{&teacher}}, probe, labels, 1.0f, {});
    CHECK(r.report.d_global < 1e-3);
    CHECK(std::fabs(r.report.total - r.report.ce) < 1e-3);

    // Model-zoo contract: emitted batch stats equal running stats within 1e-4.
    ForwardLogits fl = forward_logits(teacher, probe, RunMode::train);
    for (const auto& st : fl.batch_stats) {
        const BatchNormLayer* bn = nullptr;
        for (const auto& l : teacher.layers)
            if (const auto* b = std::get_if<BatchNormLayer>(&l); b && b->name == st.layer) bn = b;
        REQUIRE(bn != nullptr);
        for (int c = 0; c < st.mean.dim(0); ++c) {
            CHECK(std::fabs(st.mean.at(c) - bn->running_mean.at(c)) < 1e-4);
            CHECK(std::fabs(st.var.at(c) - bn->running_var.at(c)) < 1e-4);
        }
    }
}

TEST_CASE("adam step matches the hand-applied update formulas") {
    // First step: m = 0.5*g = 1, v = 0.1*g^2 = 0.4, mhat = 2, vhat = 4,
    // x' = 0 - 0.25 * 2/(2 + 1e-8) = -0.25.
    Tensor x = Tensor::from({1, 1, 1, 1}, {0.0f});
    Tensor g = Tensor::from({1, 1, 1, 1}, {2.0f});
    AdamState st = AdamState::for_shape(x.dims(), 0.25f, 0.5f, 0.9f, 1e-8f);
    grad_step(x, g, st);
    CHECK(x.at(0) == doctest::Approx(-0.25f).epsilon(1e-6));
    CHECK(st.step_count == 1);
    CHECK(st.m[0] == doctest::Approx(1.0f));
    CHECK(st.v[0] == doctest::Approx(0.4f));
}

TEST_CASE("zero gradient leaves x and the moments untouched") {
    Tensor x = Tensor::from({2, 1, 1, 1}, {0.7f, -0.2f});
    AdamState st = AdamState::for_shape(x.dims());
    grad_step(x, Tensor::zeros(x.dims()), st);
    CHECK(x.at(0) == 0.7f);
    CHECK(x.at(1) == -0.2f);
    CHECK(st.m[0] == 0.0f);
    CHECK(st.v[0] == 0.0f);
}

TEST_CASE("repeated identical gradients move x monotonically against the sign") {
    Tensor x = Tensor::from({1, 1, 1, 1}, {1.0f});
    Tensor g = Tensor::from({1, 1, 1, 1}, {0.5f});
    AdamState st = AdamState::for_shape(x.dims());
    float prev = x.at(0);
    for (int i = 0; i < 5; ++i) {
        grad_step(x, g, st);
        CHECK(x.at(0) < prev);
        prev = x.at(0);
    }
}

TEST_CASE("grad_step contract errors") {
    Tensor x = Tensor::zeros({2, 1, 1, 1});
    AdamState st = AdamState::for_shape(x.dims());
    CHECK_THROWS_AS(grad_step(x, Tensor::zeros({3, 1, 1, 1}), st), ShapeError);
    Tensor bad = Tensor::from({2, 1, 1, 1}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(grad_step(x, bad, st), NumericError);
}

TEST_CASE("recovery_loss contract errors") {
    TrainedModel teacher = toy_bn_teacher(0.0f, 1.0f);
    Tensor x = testsupport::random_tensor({4, 1, 1, 1}, 4);
    CHECK_THROWS_AS(recovery_loss({}, x, {0, 0, 0, 0}, 1.0f, {}), ContractError);
    CHECK_THROWS_AS(recovery_loss({{&teacher}}, x, {0, 0, 2, 0}, 1.0f, {}), ContractError);
    Tensor single = testsupport::random_tensor({1, 1, 1, 1}, 5);
    CHECK_THROWS_AS(recovery_loss({{&teacher}}, single, {0}, 1.0f, {}), ContractError);
}

TEST_CASE("two identical teachers reproduce the single-teacher result bit for bit") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 4, 2);
    Tensor x = testsupport::random_tensor({4, 3, 32, 32}, 8);
    RecoveryResult one = recovery_loss({{&teacher}}, x, {0, 1, 2, 0}, 1.0f, {});
    RecoveryResult two = recovery_loss({{&teacher, &teacher}}, x, {0, 1, 2, 0}, 1.0f, {});
    CHECK(one.report.total == two.report.total);
    for (int64_t i = 0; i < one.grad.numel(); ++i) CHECK(one.grad.at(i) == two.grad.at(i));
}

TEST_CASE("descent sanity on the fixed toy instance") {
    DatasetPair data = testsupport::shapes_dataset();
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 12, 3);
    int halved = 0;
    for (uint64_t seed : {101ull, 202ull, 303ull}) {
        Tensor x = testsupport::random_tensor({4, 3, 32, 32}, seed, -1.5f, 1.5f);
        AdamState st = AdamState::for_shape(x.dims(), 0.05f, 0.5f, 0.9f, 1e-8f);
        float initial = 0.0f, final = 0.0f;
        for (int step = 0; step < 200; ++step) {
            RecoveryResult r = recovery_loss({{&teacher}}, x, {0, 1, 2, 3}, 1.0f, {});
            if (step == 0) initial = r.report.total;
            final = r.report.total;
            grad_step(x, r.grad, st);
        }
        if (final <= 0.5f * initial) ++halved;
    }
    CHECK(halved == 3);
}

TEST_CASE("precision parity: half16 policy tracks full32 cross-entropy") {
    DatasetPair data = testsupport::shapes_dataset();
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 12, 3);
    TrainedModel teacher_half = teacher.cast_params(Precision::half16);

    auto run = [&](const PrecisionPolicy& policy, const TrainedModel& model) {
        Tensor x = testsupport::random_tensor({4, 3, 32, 32}, 77, -1.0f, 1.0f);
        AdamState st = AdamState::for_shape(x.dims(), 0.05f, 0.5f, 0.9f, 1e-8f);
        float ce = 0.0f;
        for (int step = 0; step < 500; ++step) {
            RecoveryResult r = recovery_loss({{&model}}, x, {0, 1, 2, 3}, 1.0f, policy);
            ce = r.report.ce;
            grad_step(x, r.grad, st);
        }
        return ce;
    };
    const float full = run(PrecisionPolicy::all_full32(), teacher);
    const float half = run(PrecisionPolicy::mixed_half16(), teacher_half);
    CHECK(std::fabs(full - half) / std::max({full, half, 0.01f}) < 0.05f);
}
