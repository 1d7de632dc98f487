#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resmatch/errors.hpp"
#include "resmatch/metrics.hpp"
#include "support.hpp"

using namespace resmatch;

TEST_CASE("pixel entropy of degenerate and balanced images") {
    CHECK(pixel_entropy(Tensor::full({2, 3, 8, 8}, 0.5f), 64) == doctest::Approx(0.0));

    // Exactly two values in equal proportion: one fair bit.
    Tensor two = Tensor::zeros({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) two.set(i, i % 2 == 0 ? 0.0f : 1.0f);
    CHECK(pixel_entropy(two, 64) == doctest::Approx(1.0));
    CHECK(pixel_entropy(two, 2) == doctest::Approx(1.0));

    CHECK_THROWS_AS(pixel_entropy(Tensor::zeros({0, 3, 4, 4}), 64), ContractError);
    CHECK_THROWS_AS(pixel_entropy(two, 1), ContractError);
}

TEST_CASE("uniform-random pixels approach log2(bins) bits") {
    Tensor noise = testsupport::random_tensor({2, 3, 64, 64}, 55, 0.0f, 1.0f);
    const double bits = pixel_entropy(noise, 256);
    CHECK(bits > 8.0 - 0.1);
    CHECK(bits <= 8.0 + 1e-9);
}

TEST_CASE("feature entropy: degenerate batch and determinism") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 4, 2);

    // Identical repeated images: every feature dimension is a point mass.
    Tensor repeated = Tensor::zeros({6, 3, 32, 32});
    Tensor one = take_sample(data.train.images, 0);
    for (int i = 0; i < 6; ++i) put_sample(repeated, i, one);
    CHECK(feature_entropy(teacher, repeated) == doctest::Approx(0.0));

    Tensor batch = testsupport::random_tensor({8, 3, 32, 32}, 4);
    CHECK(feature_entropy(teacher, batch) == feature_entropy(teacher, batch));
}

TEST_CASE("feature entropy fixture is reproducible across runs") {
    DatasetPair data = testsupport::shapes_dataset();
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 12, 3);
    Tensor real = Tensor::zeros({32, 3, 32, 32});
    for (int i = 0; i < 32; ++i) put_sample(real, i, take_sample(data.train.images, i * 11));
    const double value = feature_entropy(teacher, real);
    CHECK(value > 0.0);

    // Self-pinning fixture: first run records, later runs must reproduce.
    const auto pin = testsupport::fixture_cache() / "feature_entropy.fixture";
    if (std::filesystem::exists(pin)) {
        std::ifstream in(pin);
        double pinned = 0.0;
        in >> pinned;
        CHECK(value == doctest::Approx(pinned).epsilon(1e-12));
    } else {
        std::ofstream out(pin);
        out.precision(17);
        out << value << "\n";
    }
}

TEST_CASE("mro cost ratio closed form") {
    CHECK(mro_cost_ratio(2000, 3, 500, 1.0) == doctest::Approx(1.0));

    const double r = std::pow(200.0 / 224.0, 2.0);
    CHECK(mro_cost_ratio(2000, 3, 500, r) == doctest::Approx(0.89859693877551).epsilon(1e-10));

    CHECK(mro_cost_ratio(100, 1, 50, 0.25) == doctest::Approx(0.625));

    CHECK_THROWS_AS(mro_cost_ratio(100, 1, 50, 1.5), ContractError);
    CHECK_THROWS_AS(mro_cost_ratio(100, 3, 50, 0.5), ContractError);
}

TEST_CASE("count_flops on a hand-built single conv layer") {
    TrainedModel toy;
    toy.spec.arch = Arch::cnn_s;
    toy.spec.in_channels = 1;
    toy.spec.in_h = 32;
    toy.spec.in_w = 32;
    toy.spec.num_classes = 1;
    Conv2dLayer conv;
    conv.name = "c";
    conv.in_ch = 1;
    conv.out_ch = 1;
    conv.k = 3;
    conv.stride = 1;
    conv.pad = 1;
    conv.weight = Tensor::zeros({1, 1, 3, 3});
    conv.bias = Tensor::zeros({1});
    toy.layers.emplace_back(std::move(conv));
    CHECK(count_flops(toy, 32, 32) == 9 * 32 * 32);

    // Stride-1 same-pad conv stacks scale exactly x4 when H and W double.
    Conv2dLayer conv2;
    conv2.name = "c2";
    conv2.in_ch = 1;
    conv2.out_ch = 4;
    conv2.k = 3;
    conv2.stride = 1;
    conv2.pad = 1;
    conv2.weight = Tensor::zeros({4, 1, 3, 3});
    conv2.bias = Tensor::zeros({4});
    toy.layers.emplace_back(std::move(conv2));
    CHECK(count_flops(toy, 64, 64) == 4 * count_flops(toy, 32, 32));
}

TEST_CASE("cnn-s MAC ratio at 24 vs 32 is within 10% of the area ratio") {
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    TrainedModel model = build_model(spec, 1);
    const double ratio = static_cast<double>(count_flops(model, 24, 24)) /
                         static_cast<double>(count_flops(model, 32, 32));
    const double r = (24.0 / 32.0) * (24.0 / 32.0);
    CHECK(std::fabs(ratio - r) / r < 0.10);
}

TEST_CASE("cost report: analytic Eq. values and measured schedule agree") {
    ModelSpec spec;
    spec.arch = Arch::cnn_m;
    spec.in_h = 224;
    spec.in_w = 224;
    spec.num_classes = 8;
    TrainedModel model = build_model(spec, 1);
    CostReport rep = mro_cost_report(model, 2000, 3, 200, 224);
    CHECK(rep.stage_steps == 500);
    CHECK(rep.r == doctest::Approx(std::pow(200.0 / 224.0, 2.0)));
    CHECK(rep.analytic_ratio == doctest::Approx(0.89859693877551).epsilon(1e-10));
    CHECK(rep.analytic_ratio > 0.0);
    CHECK(rep.analytic_ratio <= 1.0);
    CHECK(std::fabs(rep.measured_ratio - rep.analytic_ratio) / rep.analytic_ratio < 0.10);
}

TEST_CASE("entropy bound: uniform outputs, maximum, and linear scaling") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 3;
    TrainedModel model = build_model(spec, 6);

    // Zero the classifier head: outputs become exactly uniform.
    TrainedModel flat = model.clone();
    for (auto& layer : flat.layers)
        if (auto* lin = std::get_if<LinearLayer>(&layer)) {
            for (int64_t i = 0; i < lin->weight.numel(); ++i) lin->weight.set(i, 0.0f);
            for (int64_t i = 0; i < lin->bias.numel(); ++i) lin->bias.set(i, 0.0f);
        }
    EntropyBound uniform = entropy_bound(flat, data.train.images, 5);
    CHECK(uniform.h_max_nats == doctest::Approx(std::log(3.0)).epsilon(1e-9));
    CHECK(uniform.bound_nats == doctest::Approx(5.0 * std::log(3.0)).epsilon(1e-9));

    TrainedModel trained = testsupport::cached_teacher(data, Arch::cnn_s, 4, 2);
    EntropyBound any = entropy_bound(trained, data.train.images, 7);
    CHECK(any.h_max_nats <= std::log(3.0) + 1e-9);

    EntropyBound zero = entropy_bound(trained, data.train.images, 0);
    CHECK(zero.bound_nats == 0.0);
    EntropyBound one = entropy_bound(trained, data.train.images, 1);
    EntropyBound many = entropy_bound(trained, data.train.images, 1000);
    CHECK(many.bound_nats == doctest::Approx(1000.0 * one.bound_nats).epsilon(1e-12));
}
