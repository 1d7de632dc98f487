#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "resmatch/ops.hpp"
#include "resmatch/tape.hpp"
#include "resmatch/tensor.hpp"

namespace resmatch {

enum class Arch { cnn_s, cnn_m, cnn_l };
Arch arch_from_name(const std::string& name);
const char* arch_name(Arch arch);

struct ModelSpec {
    Arch arch = Arch::cnn_s;
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;
    int num_classes = 8;
};

// Execution precision for a forward pass. BN-statistics divergence and
// pixel gradients are full32 by construction and have no knob here.
struct PrecisionPolicy {
    Precision params = Precision::full32;
    Precision logits_and_ce = Precision::full32;

    static PrecisionPolicy all_full32() { return {}; }
    static PrecisionPolicy mixed_half16() {
        return {Precision::half16, Precision::half16};
    }
    const char* mode_name() const {
        return logits_and_ce == Precision::half16 ? "half16" : "full32";
    }
};

struct Provenance {
    std::string dataset_id;
    std::string dataset_digest;
    int epochs = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    uint64_t seed = 0;
    // pretraining hyperparameters, echoed for the record
    double lr = 0.0;
    double momentum = 0.0;
    double weight_decay = 0.0;
    int batch = 0;
};

struct Conv2dLayer {
    std::string name;
    int in_ch, out_ch, k, stride, pad;
    Tensor weight;  // [out,in,k,k]
    Tensor bias;    // [out]
};

struct BatchNormLayer {
    std::string name;
    int channels;
    float eps = 1e-5f;
    Tensor gamma, beta;               // trainable
    Tensor running_mean, running_var; // buffers, always full32
};

struct ReluLayer {
    std::string name;
};

struct MaxPoolLayer {
    std::string name;
    int k = 2, stride = 2;
};

struct GlobalPoolLayer {
    std::string name;
};

struct LinearLayer {
    std::string name;
    int in_f, out_f;
    Tensor weight;  // [out,in]
    Tensor bias;    // [out]
};

using Layer = std::variant<Conv2dLayer, BatchNormLayer, ReluLayer, MaxPoolLayer, GlobalPoolLayer,
                           LinearLayer>;

struct TrainedModel {
    ModelSpec spec;
    std::vector<Layer> layers;
    Provenance provenance;

    TrainedModel clone() const;  // deep copy of all tensors
    TrainedModel cast_params(Precision target) const;  // buffers stay full32
    Precision param_precision() const;
    int64_t parameter_count() const;
    std::size_t parameter_bytes() const;  // trainable parameters only
    int bn_layer_count() const;

    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    void for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_buffer(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Deterministic initialization: Kaiming-uniform (fan-in) conv/linear
// weights, zero biases, gamma=1, beta=0, running mean 0 / var 1.
TrainedModel build_model(const ModelSpec& spec, uint64_t seed);

enum class RunMode { train, eval };

struct BnStats {
    std::string layer;
    Value mean;  // [C], full32 tape values
    Value var;
    const BatchNormLayer* bn;
};

struct ForwardOptions {
    RunMode mode = RunMode::eval;
    PrecisionPolicy policy;
    bool param_grads = false;
    // In eval mode, additionally emit per-BN statistics of the layer
    // *inputs* (used by the running-stat convergence diagnostic).
    bool observe_bn_inputs = false;
};

struct ForwardValues {
    Value logits;
    Value features;  // pooled penultimate activations [N,F]
    std::vector<BnStats> bn_stats;
};

ForwardValues forward_model(Tape& tape, const TrainedModel& model, Value input,
                            const ForwardOptions& opts);

// Tensor-level forward: train mode returns per-BN-layer batch statistics
// (full32 regardless of policy), eval mode returns none.
struct ForwardLogits {
    Tensor logits;
    struct LayerStats {
        std::string layer;
        Tensor mean, var;
    };
    std::vector<LayerStats> batch_stats;
};
ForwardLogits forward_logits(const TrainedModel& model, const Tensor& batch, RunMode mode,
                             const PrecisionPolicy& policy = {});

// Chunked eval-mode inference.
Tensor eval_logits(const TrainedModel& model, const Tensor& batch, int chunk = 64);
Tensor eval_features(const TrainedModel& model, const Tensor& batch, int chunk = 64);

// Mean/variance of every BN layer's input under eval-mode propagation,
// streamed over the given images.
struct BnObservation {
    std::string layer;
    std::vector<float> mean, var;
};
std::vector<BnObservation> collect_bn_input_stats(const TrainedModel& model, const Tensor& images,
                                                  int chunk = 128);

// Checkpoint directory: manifest.json + tensors/<layer>.<field>.fdrt.
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace resmatch
