// Shared test fixtures: cached datasets/checkpoints and the
// finite-difference gradient harness.
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "resmatch/data.hpp"
#include "resmatch/model.hpp"
#include "resmatch/ops.hpp"
#include "resmatch/pretrain.hpp"
#include "resmatch/tape.hpp"
#include "resmatch/tensor.hpp"
#include "resmatch/util.hpp"

namespace testsupport {

using namespace resmatch;

inline Tensor random_tensor(std::vector<int> dims, uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(dims));
    auto rng = make_rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : t.f32()) v = dist(rng);
    return t;
}

// Random tensor with every |value| >= margin and pairwise distinct values;
// keeps relu/maxpool away from their kinks under the FD step.
inline Tensor random_tensor_kink_free(std::vector<int> dims, uint64_t seed, float margin = 0.05f) {
    Tensor t = Tensor::zeros(std::move(dims));
    auto rng = make_rng(seed);
    std::uniform_real_distribution<float> dist(margin, 1.0f);
    std::uniform_int_distribution<int> sign(0, 1);
    int64_t i = 0;
    for (auto& v : t.f32()) {
        v = (sign(rng) ? 1.0f : -1.0f) * (dist(rng) + 0.001f * static_cast<float>(i % 97));
        ++i;
    }
    return t;
}

// Central-difference gradient check. `build` must construct a scalar loss
// from the given leaves on the given tape; it is re-invoked on perturbed
// copies of the inputs, so it has to be a pure function of them. The
// default step balances truncation against float32 rounding of the loss
// value (both land near 1e-4 relative).
inline void check_gradients(
    const std::vector<Tensor>& inputs,
    const std::function<Value(Tape&, const std::vector<Value>&)>& build, float h = 1e-2f,
    float tol = 1e-3f, float denom_floor = 0.1f) {
    Tape tape;
    std::vector<Tensor> tracked;
    std::vector<Value> leaves;
    for (const auto& in : inputs) {
        Tensor copy = in.clone();
        copy.zero_grad();
        tracked.push_back(copy);
        leaves.push_back(tape.leaf(copy, true));
    }
    Value loss = build(tape, leaves);
    REQUIRE(tape.value(loss).numel() == 1);
    tape.backward(loss);

    auto loss_at = [&](const std::vector<Tensor>& points) {
        Tape t2;
        std::vector<Value> consts;
        for (const auto& p : points) consts.push_back(t2.constant(p));
        Value l = build(t2, consts);
        return static_cast<double>(t2.value(l).at(0));
    };

    for (std::size_t which = 0; which < inputs.size(); ++which) {
        const auto& grad = tracked[which].grad_const();
        for (int64_t i = 0; i < tracked[which].numel(); ++i) {
            std::vector<Tensor> plus, minus;
            for (std::size_t j = 0; j < tracked.size(); ++j) {
                plus.push_back(tracked[j].clone());
                minus.push_back(tracked[j].clone());
            }
            plus[which].set(i, plus[which].at(i) + h);
            minus[which].set(i, minus[which].at(i) - h);
            const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            const double ad = grad[static_cast<std::size_t>(i)];
            const double rel = std::fabs(ad - fd) / std::max(std::fabs(fd), static_cast<double>(denom_floor));
            INFO("input ", which, " element ", i, ": ad=", ad, " fd=", fd);
            CHECK(rel < tol);
        }
    }
}

// ---------------------------------------------------------------------------
// Cached fixtures. Writes go through a temp dir + rename so concurrent test
// binaries can share the cache safely; results are deterministic, so a race
// produces identical bytes either way.

inline std::filesystem::path fixture_cache() {
    auto dir = std::filesystem::temp_directory_path() / "resmatch_test_cache";
    std::filesystem::create_directories(dir);
    return dir;
}

inline DatasetPair shapes_dataset(uint64_t seed = 7, int classes = 8, int per_class = 200,
                                  int size = 32) {
    auto dir = fixture_cache() / ("shapes_" + std::to_string(seed) + "_" + std::to_string(classes) +
                                  "_" + std::to_string(per_class) + "_" + std::to_string(size));
    if (std::filesystem::exists(dir / "manifest.json")) return load_dataset(dir);
    DatasetPair data = gen_synthetic(seed, {classes, per_class, size});
    auto tmp = dir;
    tmp += ".tmp" + std::to_string(::getpid());
    save_dataset(data, tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, dir, ec);
    if (ec) std::filesystem::remove_all(tmp);
    return data;
}

inline TrainedModel cached_teacher(const DatasetPair& data, Arch arch, int epochs, uint64_t seed) {
    auto dir = fixture_cache() / ("teacher_" + std::string(arch_name(arch)) + "_e" +
                                  std::to_string(epochs) + "_s" + std::to_string(seed) + "_" +
                                  data.train.digest().substr(8, 8));
    if (std::filesystem::exists(dir / "manifest.json")) return load_checkpoint(dir);
    ModelSpec spec;
    spec.arch = arch;
    spec.in_channels = data.train.images.dim(1);
    spec.in_h = data.train.images.dim(2);
    spec.in_w = data.train.images.dim(3);
    spec.num_classes = data.train.num_classes;
    PretrainHyper hyper;
    hyper.epochs = epochs;
    hyper.seed = seed;
    TrainedModel model = pretrain(build_model(spec, seed), data, hyper);
    auto tmp = dir;
    tmp += ".tmp" + std::to_string(::getpid());
    save_checkpoint(model, tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, dir, ec);
    if (ec) std::filesystem::remove_all(tmp);
    return model;
}

}  // namespace testsupport
