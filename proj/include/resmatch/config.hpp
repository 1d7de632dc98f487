#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "resmatch/model.hpp"
#include "resmatch/tensor.hpp"

namespace resmatch {

enum class LrSchedule { none, cosine };
enum class ScheduleHorizon { whole, per_stage };

// Every knob of the distillation loop. Mirrors the flat key-value config
// file one to one (see parse_config).
struct DistillConfig {
    int budget = 2000;        // total optimization iterations B
    int arc_count = 3;        // residual injections k
    float merge_ratio = 0.5f; // alpha
    bool arc_enabled = true;
    int d_ds = 32;
    int d_orig = 32;
    int ipc = 10;
    int grid = 1;  // 1 -> 1x1 patch, 2 -> 2x2 mosaic
    float lambda = 1.0f;
    float lr = 0.25f;
    float beta1 = 0.5f;
    float beta2 = 0.9f;
    float epsilon = 1e-8f;
    Precision params_precision = Precision::full32;
    Precision logits_precision = Precision::full32;
    LrSchedule scheduler = LrSchedule::cosine;
    ScheduleHorizon scheduler_horizon = ScheduleHorizon::whole;
    uint64_t seed = 0;
    int patch_candidates = 8;
    std::string data;  // dataset directory

    PrecisionPolicy policy() const { return {params_precision, logits_precision}; }
    void validate() const;  // throws ConfigError
};

// Flat "key = value" text, '#' comments. parse(serialize(parse(x))) is a
// fixed point.
DistillConfig parse_config(const std::string& text);
std::string serialize_config(const DistillConfig& cfg);
DistillConfig load_config(const std::filesystem::path& path);

}  // namespace resmatch
