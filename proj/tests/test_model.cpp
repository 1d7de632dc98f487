#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resmatch/errors.hpp"
#include "resmatch/evaluate.hpp"
#include "resmatch/model.hpp"
#include "resmatch/pretrain.hpp"
#include "support.hpp"

using namespace resmatch;
namespace fs = std::filesystem;

TEST_CASE("same spec and seed build bit-identical parameters") {
    ModelSpec spec;
    spec.arch = Arch::cnn_m;
    TrainedModel a = build_model(spec, 99);
    TrainedModel b = build_model(spec, 99);
    bool equal = true;
    a.for_each_param([&](const std::string& name, const Tensor& t) {
        b.for_each_param([&](const std::string& name2, const Tensor& t2) {
            if (name != name2) return;
            for (int64_t i = 0; i < t.numel(); ++i)
                if (t.at(i) != t2.at(i)) equal = false;
        });
    });
    CHECK(equal);
    TrainedModel c = build_model(spec, 100);
    CHECK(c.parameter_count() == a.parameter_count());
}

TEST_CASE("cnn-s parameter inventory matches the layer-by-layer formula") {
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.in_channels = 3;
    spec.in_h = 32;
    spec.in_w = 32;
    spec.num_classes = 10;
    TrainedModel model = build_model(spec, 1);
    CHECK(model.bn_layer_count() >= 2);

    // conv: out*(in*3*3) + out; bn: 2*out; fc: classes*feat + classes.
    const int64_t conv1 = 16 * 3 * 9 + 16;
    const int64_t bn1 = 2 * 16;
    const int64_t conv2 = 32 * 16 * 9 + 32;
    const int64_t bn2 = 2 * 32;
    const int64_t fc = 10 * 32 + 10;
    CHECK(model.parameter_count() == conv1 + bn1 + conv2 + bn2 + fc);
}

TEST_CASE("fresh model forwards zero input to the final linear bias") {
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 5;
    TrainedModel model = build_model(spec, 3);
    Tensor zeros = Tensor::zeros({2, 3, 32, 32});
    Tensor logits = eval_logits(model, zeros);
    const auto* fc = std::get_if<LinearLayer>(&model.layers.back());
    REQUIRE(fc != nullptr);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 5; ++k)
            CHECK(logits.at(static_cast<int64_t>(n) * 5 + k) ==
                  doctest::Approx(fc->bias.at(k)).epsilon(1e-6));
}

TEST_CASE("incompatible pooling stack is a spec error") {
    ModelSpec spec;
    spec.arch = Arch::cnn_l;  // three pools
    spec.in_h = 30;           // 30 -> 15: second pool input is odd
    spec.in_w = 30;
    CHECK_THROWS_AS(build_model(spec, 0), ConfigError);
}

TEST_CASE("every architecture accepts both MRO resolutions") {
    for (Arch arch : {Arch::cnn_s, Arch::cnn_m, Arch::cnn_l}) {
        ModelSpec spec;
        spec.arch = arch;
        TrainedModel model = build_model(spec, 2);
        for (int d : {24, 32}) {
            Tensor batch = Tensor::zeros({2, 3, d, d});
            ForwardLogits out = forward_logits(model, batch, RunMode::eval);
            CHECK(out.logits.dims() == std::vector<int>{2, 8});
        }
    }
}

TEST_CASE("a collapsed feature map raises a resolution error naming the layer") {
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    TrainedModel model = build_model(spec, 2);
    Tensor tiny = Tensor::zeros({1, 3, 2, 2});  // second pool sees 1x1
    CHECK_THROWS_WITH_AS(forward_logits(model, tiny, RunMode::eval),
                         doctest::Contains("pool2"), ResolutionError);
}

TEST_CASE("train mode emits full32 batch stats, eval mode emits none") {
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    TrainedModel model = build_model(spec, 4);
    Tensor batch = testsupport::random_tensor({4, 3, 32, 32}, 5);
    ForwardLogits train = forward_logits(model, batch, RunMode::train);
    CHECK(train.batch_stats.size() == 2);
    for (const auto& st : train.batch_stats) {
        CHECK(st.mean.precision() == Precision::full32);
        CHECK(st.var.precision() == Precision::full32);
    }
    ForwardLogits eval = forward_logits(model, batch, RunMode::eval);
    CHECK(eval.batch_stats.empty());
}

TEST_CASE("pretraining learns the shapes dataset") {
    DatasetPair data = testsupport::shapes_dataset();
    TrainedModel teacher = testsupport::cached_teacher(data, Arch::cnn_s, 30, 1);
    CHECK(teacher.provenance.train_accuracy >= 0.95);
    CHECK(teacher.provenance.test_accuracy >= 0.90);  // learnability gate
    CHECK(teacher.provenance.epochs == 30);

    SUBCASE("BN running statistics converged (mean absolute deviation < 0.1)") {
        auto obs = collect_bn_input_stats(teacher, data.train.images);
        REQUIRE(!obs.empty());
        double dev_sum = 0.0;
        int count = 0;
        for (const auto& layer : obs) {
            const BatchNormLayer* bn = nullptr;
            for (const auto& l : teacher.layers)
                if (const auto* b = std::get_if<BatchNormLayer>(&l); b && b->name == layer.layer)
                    bn = b;
            REQUIRE(bn != nullptr);
            for (std::size_t c = 0; c < layer.mean.size(); ++c) {
                dev_sum += std::fabs(layer.mean[c] - bn->running_mean.at(static_cast<int64_t>(c)));
                dev_sum += std::fabs(layer.var[c] - bn->running_var.at(static_cast<int64_t>(c)));
                count += 2;
            }
        }
        CHECK(dev_sum / count < 0.1);
    }

    SUBCASE("eval-mode replay reproduces the provenance test accuracy exactly") {
        CHECK(evaluate(teacher, data.test) == teacher.provenance.test_accuracy);
    }
}

TEST_CASE("zero-epoch pretraining is a parameter no-op") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 3;
    TrainedModel fresh = build_model(spec, 17);
    PretrainHyper hyper;
    hyper.epochs = 0;
    TrainedModel out = pretrain(fresh, data, hyper);
    bool identical = true;
    fresh.for_each_param([&](const std::string& name, const Tensor& t) {
        out.for_each_param([&](const std::string& name2, const Tensor& t2) {
            if (name != name2) return;
            for (int64_t i = 0; i < t.numel(); ++i)
                if (t.at(i) != t2.at(i)) identical = false;
        });
    });
    CHECK(identical);
}

TEST_CASE("pretraining is deterministic in the seed") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 3;
    PretrainHyper hyper;
    hyper.epochs = 3;
    hyper.seed = 5;
    TrainedModel a = pretrain(build_model(spec, 5), data, hyper);
    TrainedModel b = pretrain(build_model(spec, 5), data, hyper);
    CHECK(a.provenance.test_accuracy == b.provenance.test_accuracy);
    CHECK(a.provenance.train_accuracy == b.provenance.train_accuracy);
}

TEST_CASE("pretrain contract errors") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 4;  // dataset has 3
    CHECK_THROWS_AS(pretrain(build_model(spec, 0), data, PretrainHyper{}), ContractError);

    DatasetPair empty;
    spec.num_classes = 3;
    CHECK_THROWS_AS(pretrain(build_model(spec, 0), empty, PretrainHyper{}), ContractError);
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
    DatasetPair data = testsupport::shapes_dataset(11, 3, 20, 32);
    ModelSpec spec;
    spec.arch = Arch::cnn_s;
    spec.num_classes = 3;
    PretrainHyper hyper;
    hyper.epochs = 2;
    TrainedModel model = pretrain(build_model(spec, 8), data, hyper);

    const auto dir1 = testsupport::fixture_cache() / "ckpt_a";
    const auto dir2 = testsupport::fixture_cache() / "ckpt_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    save_checkpoint(model, dir1);
    TrainedModel loaded = load_checkpoint(dir1);
    save_checkpoint(loaded, dir2);

    auto read = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(read(dir1 / "manifest.json") == read(dir2 / "manifest.json"));
    for (const auto& entry : fs::directory_iterator(dir1 / "tensors")) {
        const auto name = entry.path().filename();
        CHECK(read(entry.path()) == read(dir2 / "tensors" / name));
    }
    CHECK(loaded.provenance.test_accuracy == model.provenance.test_accuracy);
    CHECK(evaluate(loaded, data.test) == model.provenance.test_accuracy);
}

TEST_CASE("cast_params halves trainable parameter bytes exactly") {
    ModelSpec spec;
    spec.arch = Arch::cnn_m;
    TrainedModel model = build_model(spec, 21);
    TrainedModel half = model.cast_params(Precision::half16);
    CHECK(half.param_precision() == Precision::half16);
    CHECK(half.parameter_bytes() * 2 == model.parameter_bytes());
    // Running buffers stay full32.
    half.for_each_buffer([](const std::string&, const Tensor& t) {
        CHECK(t.precision() == Precision::full32);
    });
}
