#include "resmatch/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/util.hpp"

namespace resmatch {

using ordered_json = nlohmann::ordered_json;

Arch arch_from_name(const std::string& name) {
    if (name == "cnn-s") return Arch::cnn_s;
    if (name == "cnn-m") return Arch::cnn_m;
    if (name == "cnn-l") return Arch::cnn_l;
    throw ConfigError("unknown architecture '" + name + "' (expected cnn-s, cnn-m or cnn-l)");
}

const char* arch_name(Arch arch) {
    switch (arch) {
        case Arch::cnn_s: return "cnn-s";
        case Arch::cnn_m: return "cnn-m";
        default: return "cnn-l";
    }
}

namespace {

struct BlockPlan {
    int out_ch;
    bool pool;
};

// conv3x3(pad 1) -> BN -> relu blocks, optional 2x2 maxpool, global average
// pooling, then a single linear head shared across input resolutions.
std::vector<BlockPlan> arch_blocks(Arch arch) {
    switch (arch) {
        case Arch::cnn_s:
            return {{32, true}, {64, true}};
        case Arch::cnn_m:
            return {{16, true}, {32, true}, {64, false}, {64, false}};
        default:
            return {{16, true}, {32, true}, {32, false}, {64, true}, {64, false}, {128, false}};
    }
}

float kaiming_bound(int fan_in) { return std::sqrt(6.0f / static_cast<float>(fan_in)); }

Tensor kaiming_uniform(std::vector<int> dims, int fan_in, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(dims));
    const float bound = kaiming_bound(fan_in);
    std::uniform_real_distribution<float> dist(-bound, bound);
    auto data = t.f32();
    for (auto& v : data) v = dist(rng);
    return t;
}

}  // namespace

TrainedModel build_model(const ModelSpec& spec, uint64_t seed) {
    if (spec.in_channels < 1 || spec.num_classes < 1)
        throw ConfigError("model spec needs at least one channel and one class");

    auto blocks = arch_blocks(spec.arch);
    TrainedModel model;
    model.spec = spec;
    model.provenance.seed = seed;
    auto rng = make_rng(seed, 0x0DE1u);

    int ch = spec.in_channels;
    int h = spec.in_h, w = spec.in_w;
    int idx = 0;
    for (const auto& blk : blocks) {
        ++idx;
        const std::string tag = std::to_string(idx);
        Conv2dLayer conv;
        conv.name = "conv" + tag;
        conv.in_ch = ch;
        conv.out_ch = blk.out_ch;
        conv.k = 3;
        conv.stride = 1;
        conv.pad = 1;
        conv.weight = kaiming_uniform({blk.out_ch, ch, 3, 3}, ch * 9, rng);
        conv.bias = Tensor::zeros({blk.out_ch});
        model.layers.emplace_back(std::move(conv));

        BatchNormLayer bn;
        bn.name = "bn" + tag;
        bn.channels = blk.out_ch;
        bn.gamma = Tensor::full({blk.out_ch}, 1.0f);
        bn.beta = Tensor::zeros({blk.out_ch});
        bn.running_mean = Tensor::zeros({blk.out_ch});
        bn.running_var = Tensor::full({blk.out_ch}, 1.0f);
        model.layers.emplace_back(std::move(bn));

        model.layers.emplace_back(ReluLayer{"relu" + tag});

        if (blk.pool) {
            if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2)
                throw ConfigError("input " + std::to_string(spec.in_h) + "x" +
                                  std::to_string(spec.in_w) + " does not divide through pool" +
                                  tag + " (feature map " + std::to_string(h) + "x" +
                                  std::to_string(w) + ")");
            model.layers.emplace_back(MaxPoolLayer{"pool" + tag, 2, 2});
            h /= 2;
            w /= 2;
        }
        ch = blk.out_ch;
    }

    model.layers.emplace_back(GlobalPoolLayer{"gap"});

    LinearLayer fc;
    fc.name = "fc";
    fc.in_f = ch;
    fc.out_f = spec.num_classes;
    fc.weight = kaiming_uniform({spec.num_classes, ch}, ch, rng);
    fc.bias = Tensor::zeros({spec.num_classes});
    model.layers.emplace_back(std::move(fc));
    return model;
}

// ---------------------------------------------------------------------------
// TrainedModel plumbing

void TrainedModel::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    for (auto& layer : layers) {
        if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            fn(conv->name + ".weight", conv->weight);
            fn(conv->name + ".bias", conv->bias);
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            fn(bn->name + ".gamma", bn->gamma);
            fn(bn->name + ".beta", bn->beta);
        } else if (auto* lin = std::get_if<LinearLayer>(&layer)) {
            fn(lin->name + ".weight", lin->weight);
            fn(lin->name + ".bias", lin->bias);
        }
    }
}

void TrainedModel::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<TrainedModel*>(this)->for_each_param(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void TrainedModel::for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn) {
    for (auto& layer : layers) {
        if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            fn(bn->name + ".running_mean", bn->running_mean);
            fn(bn->name + ".running_var", bn->running_var);
        }
    }
}

void TrainedModel::for_each_buffer(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<TrainedModel*>(this)->for_each_buffer(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

TrainedModel TrainedModel::clone() const {
    TrainedModel out = *this;  // copies handles
    out.for_each_param([](const std::string&, Tensor& t) { t = t.clone(); });
    out.for_each_buffer([](const std::string&, Tensor& t) { t = t.clone(); });
    return out;
}

TrainedModel TrainedModel::cast_params(Precision target) const {
    TrainedModel out = *this;
    out.for_each_param([&](const std::string&, Tensor& t) { t = t.cast(target); });
    out.for_each_buffer([](const std::string&, Tensor& t) { t = t.clone(); });
    return out;
}

Precision TrainedModel::param_precision() const {
    Precision p = Precision::full32;
    bool first = true;
    for_each_param([&](const std::string&, const Tensor& t) {
        if (first) {
            p = t.precision();
            first = false;
        }
    });
    return p;
}

int64_t TrainedModel::parameter_count() const {
    int64_t n = 0;
    for_each_param([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

std::size_t TrainedModel::parameter_bytes() const {
    std::size_t n = 0;
    for_each_param([&](const std::string&, const Tensor& t) { n += t.byte_size(); });
    return n;
}

int TrainedModel::bn_layer_count() const {
    int n = 0;
    for (const auto& layer : layers)
        if (std::holds_alternative<BatchNormLayer>(layer)) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Forward

ForwardValues forward_model(Tape& tape, const TrainedModel& model, Value input,
                            const ForwardOptions& opts) {
    const Tensor& in = tape.value(input);
    if (in.ndim() != 4)
        throw ShapeError("model input must be [N,C,H,W], got " + in.shape_string());
    if (in.dim(1) != model.spec.in_channels)
        throw ShapeError("model input channel axis is " + std::to_string(in.dim(1)) +
                         ", spec expects " + std::to_string(model.spec.in_channels));

    const bool half = opts.policy.logits_and_ce == Precision::half16;
    auto maybe_quantize = [&](Value v) { return half ? ops::quantize_half(tape, v) : v; };

    ForwardValues out;
    Value x = input;
    for (const auto& layer : model.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            Value wv = tape.leaf(conv->weight, opts.param_grads);
            Value bv = tape.leaf(conv->bias, opts.param_grads);
            x = maybe_quantize(ops::conv2d(tape, x, wv, bv, conv->stride, conv->pad));
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            Value gamma = tape.leaf(bn->gamma, opts.param_grads);
            Value beta = tape.leaf(bn->beta, opts.param_grads);
            if (opts.mode == RunMode::train) {
                // Batch statistics (biased variance) stay full32 even under
                // a half16 activation policy.
                Value mu = ops::mean_channels(tape, x);
                Value xc = ops::broadcast_sub(tape, x, mu);
                Value var = ops::mean_channels(tape, ops::square(tape, xc));
                Value istd = ops::rsqrt_shift(tape, var, bn->eps);
                Value xh = ops::broadcast_mul(tape, xc, istd);
                x = maybe_quantize(
                    ops::broadcast_add(tape, ops::broadcast_mul(tape, xh, gamma), beta));
                out.bn_stats.push_back({bn->name, mu, var, bn});
            } else {
                if (opts.observe_bn_inputs) {
                    Value mu_in = ops::mean_channels(tape, x);
                    Value var_in = ops::mean_channels(
                        tape, ops::square(tape, ops::broadcast_sub(tape, x, mu_in)));
                    out.bn_stats.push_back({bn->name, mu_in, var_in, bn});
                }
                Tensor istd_t = Tensor::zeros({bn->channels});
                for (int c = 0; c < bn->channels; ++c)
                    istd_t.set(c, 1.0f / std::sqrt(bn->running_var.at(c) + bn->eps));
                Value xc = ops::broadcast_sub(tape, x, tape.constant(bn->running_mean));
                Value xh = ops::broadcast_mul(tape, xc, tape.constant(istd_t));
                x = maybe_quantize(
                    ops::broadcast_add(tape, ops::broadcast_mul(tape, xh, gamma), beta));
            }
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            x = ops::relu(tape, x);
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
            const Tensor& cur = tape.value(x);
            if (cur.dim(2) < pool->k || cur.dim(3) < pool->k)
                throw ResolutionError("layer '" + pool->name + "': feature map " +
                                      std::to_string(cur.dim(2)) + "x" + std::to_string(cur.dim(3)) +
                                      " collapsed below the " + std::to_string(pool->k) + "x" +
                                      std::to_string(pool->k) + " pooling window");
            x = ops::maxpool2d(tape, x, pool->k, pool->stride);
        } else if (std::holds_alternative<GlobalPoolLayer>(layer)) {
            x = maybe_quantize(ops::spatial_mean(tape, x));
            out.features = x;
        } else if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            Value wv = tape.leaf(lin->weight, opts.param_grads);
            Value bv = tape.leaf(lin->bias, opts.param_grads);
            x = maybe_quantize(ops::linear(tape, x, wv, bv));
        }
    }
    out.logits = x;
    return out;
}

ForwardLogits forward_logits(const TrainedModel& model, const Tensor& batch, RunMode mode,
                             const PrecisionPolicy& policy) {
    Tape tape;
    ForwardOptions opts;
    opts.mode = mode;
    opts.policy = policy;
    ForwardValues fv = forward_model(tape, model, tape.constant(batch), opts);
    ForwardLogits out;
    out.logits = tape.value(fv.logits);
    if (mode == RunMode::train) {
        for (const auto& st : fv.bn_stats)
            out.batch_stats.push_back({st.layer, tape.value(st.mean), tape.value(st.var)});
    }
    return out;
}

namespace {

Tensor slice_rows(const Tensor& t, int lo, int hi) {
    std::vector<int> dims = t.dims();
    dims[0] = hi - lo;
    Tensor out = Tensor::zeros(dims);
    const int64_t row = t.numel() / t.dim(0);
    std::memcpy(out.f32().data(), t.f32().data() + static_cast<int64_t>(lo) * row,
                static_cast<std::size_t>((hi - lo) * row) * sizeof(float));
    return out;
}

}  // namespace

Tensor eval_logits(const TrainedModel& model, const Tensor& batch, int chunk) {
    const int n = batch.dim(0);
    Tensor out = Tensor::zeros({n, model.spec.num_classes});
    for (int lo = 0; lo < n; lo += chunk) {
        const int hi = std::min(n, lo + chunk);
        ForwardLogits fl = forward_logits(model, slice_rows(batch, lo, hi), RunMode::eval);
        std::memcpy(out.f32().data() + static_cast<int64_t>(lo) * model.spec.num_classes,
                    fl.logits.f32().data(),
                    static_cast<std::size_t>((hi - lo) * model.spec.num_classes) * sizeof(float));
    }
    return out;
}

Tensor eval_features(const TrainedModel& model, const Tensor& batch, int chunk) {
    const int n = batch.dim(0);
    Tensor out;
    for (int lo = 0; lo < n; lo += chunk) {
        const int hi = std::min(n, lo + chunk);
        Tape tape;
        ForwardOptions opts;  // eval, full32
        ForwardValues fv = forward_model(tape, model, tape.constant(slice_rows(batch, lo, hi)), opts);
        const Tensor& feats = tape.value(fv.features);
        if (!out.defined() || out.ndim() != 2)
            out = Tensor::zeros({n, feats.dim(1)});
        std::memcpy(out.f32().data() + static_cast<int64_t>(lo) * feats.dim(1), feats.f32().data(),
                    static_cast<std::size_t>((hi - lo) * feats.dim(1)) * sizeof(float));
    }
    return out;
}

std::vector<BnObservation> collect_bn_input_stats(const TrainedModel& model, const Tensor& images,
                                                  int chunk) {
    const int n = images.dim(0);
    std::vector<BnObservation> acc;
    std::vector<std::vector<double>> sum, sumsq;
    for (int lo = 0; lo < n; lo += chunk) {
        const int hi = std::min(n, lo + chunk);
        Tape tape;
        ForwardOptions opts;
        opts.mode = RunMode::eval;
        opts.observe_bn_inputs = true;
        ForwardValues fv = forward_model(tape, model, tape.constant(slice_rows(images, lo, hi)), opts);
        if (acc.empty()) {
            acc.resize(fv.bn_stats.size());
            sum.resize(fv.bn_stats.size());
            sumsq.resize(fv.bn_stats.size());
            for (std::size_t li = 0; li < fv.bn_stats.size(); ++li) {
                const int c = fv.bn_stats[li].bn->channels;
                acc[li].layer = fv.bn_stats[li].layer;
                sum[li].assign(static_cast<std::size_t>(c), 0.0);
                sumsq[li].assign(static_cast<std::size_t>(c), 0.0);
            }
        }
        const double w = static_cast<double>(hi - lo) / static_cast<double>(n);
        for (std::size_t li = 0; li < fv.bn_stats.size(); ++li) {
            const Tensor mu = tape.value(fv.bn_stats[li].mean);
            const Tensor var = tape.value(fv.bn_stats[li].var);
            for (int c = 0; c < mu.dim(0); ++c) {
                sum[li][static_cast<std::size_t>(c)] += w * mu.at(c);
                sumsq[li][static_cast<std::size_t>(c)] += w * (var.at(c) + mu.at(c) * mu.at(c));
            }
        }
    }
    for (std::size_t li = 0; li < acc.size(); ++li) {
        const std::size_t c = sum[li].size();
        acc[li].mean.resize(c);
        acc[li].var.resize(c);
        for (std::size_t i = 0; i < c; ++i) {
            acc[li].mean[i] = static_cast<float>(sum[li][i]);
            acc[li].var[i] = static_cast<float>(sumsq[li][i] - sum[li][i] * sum[li][i]);
        }
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "tensors");
    ordered_json manifest;
    manifest["format"] = "resmatch-checkpoint";
    manifest["version"] = 1;
    manifest["spec"] = ordered_json{{"arch", arch_name(model.spec.arch)},
                                    {"input", {model.spec.in_channels, model.spec.in_h, model.spec.in_w}},
                                    {"num_classes", model.spec.num_classes}};
    manifest["precision"] = precision_name(model.param_precision());
    const auto& p = model.provenance;
    manifest["provenance"] = ordered_json{{"dataset_id", p.dataset_id},
                                          {"dataset_digest", p.dataset_digest},
                                          {"epochs", p.epochs},
                                          {"train_accuracy", p.train_accuracy},
                                          {"test_accuracy", p.test_accuracy},
                                          {"seed", p.seed},
                                          {"lr", p.lr},
                                          {"momentum", p.momentum},
                                          {"weight_decay", p.weight_decay},
                                          {"batch", p.batch}};
    std::vector<std::string> names;
    model.for_each_param([&](const std::string& name, const Tensor& t) {
        names.push_back(name);
        save_fdrt(t, dir / "tensors" / (name + ".fdrt"));
    });
    model.for_each_buffer([&](const std::string& name, const Tensor& t) {
        names.push_back(name);
        save_fdrt(t, dir / "tensors" / (name + ".fdrt"));
    });
    manifest["tensors"] = names;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write checkpoint manifest: " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

TrainedModel load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(in);
    if (manifest.value("format", "") != "resmatch-checkpoint")
        throw FormatError("not a checkpoint manifest: " + (dir / "manifest.json").string(), 0);

    ModelSpec spec;
    spec.arch = arch_from_name(manifest.at("spec").at("arch").get<std::string>());
    auto input = manifest.at("spec").at("input").get<std::vector<int>>();
    if (input.size() != 3) throw FormatError("checkpoint spec input must be [C,H,W]", 0);
    spec.in_channels = input[0];
    spec.in_h = input[1];
    spec.in_w = input[2];
    spec.num_classes = manifest.at("spec").at("num_classes").get<int>();

    const auto& pj = manifest.at("provenance");
    TrainedModel model = build_model(spec, pj.at("seed").get<uint64_t>());
    model.provenance.dataset_id = pj.at("dataset_id").get<std::string>();
    model.provenance.dataset_digest = pj.at("dataset_digest").get<std::string>();
    model.provenance.epochs = pj.at("epochs").get<int>();
    model.provenance.train_accuracy = pj.at("train_accuracy").get<double>();
    model.provenance.test_accuracy = pj.at("test_accuracy").get<double>();
    model.provenance.seed = pj.at("seed").get<uint64_t>();
    model.provenance.lr = pj.at("lr").get<double>();
    model.provenance.momentum = pj.at("momentum").get<double>();
    model.provenance.weight_decay = pj.at("weight_decay").get<double>();
    model.provenance.batch = pj.at("batch").get<int>();

    std::map<std::string, Tensor*> slots;
    model.for_each_param([&](const std::string& name, Tensor& t) { slots[name] = &t; });
    model.for_each_buffer([&](const std::string& name, Tensor& t) { slots[name] = &t; });
    for (const auto& name : manifest.at("tensors").get<std::vector<std::string>>()) {
        auto it = slots.find(name);
        if (it == slots.end())
            throw FormatError("checkpoint tensor '" + name + "' has no slot in " +
                                  arch_name(spec.arch),
                              0);
        Tensor loaded = load_fdrt(dir / "tensors" / (name + ".fdrt"));
        if (loaded.dims() != it->second->dims())
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             loaded.shape_string() + ", expected " + it->second->shape_string());
        *it->second = loaded;
    }
    if (manifest.value("precision", "full32") == std::string("half16") &&
        model.param_precision() != Precision::half16)
        throw FormatError("checkpoint declares half16 parameters but tensors are full32", 0);
    return model;
}

}  // namespace resmatch
