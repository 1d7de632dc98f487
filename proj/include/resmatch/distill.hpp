#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <utility>

#include "resmatch/config.hpp"
#include "resmatch/data.hpp"
#include "resmatch/model.hpp"

namespace resmatch {

// Budget split: b = floor(B/(k+1)) steps per residual stage, the rest in
// the final residual-free stage. Total grad steps is exactly B.
std::pair<int, int> partition_budget(int budget, int arc_count);

// Resolution toggle between the two configured sizes; identity when they
// coincide.
std::pair<int, int> mro_target(std::pair<int, int> current, int d_ds, int d_orig);

// Per-element fusion x <- alpha*x + (1-alpha)*resample(P_s, shape(x)).
// alpha 1 and 0 short-circuit bit-exactly.
Tensor arc_merge(const Tensor& x, const Tensor& source_patches, float alpha);

struct PatchProvenance {
    int cls = 0, slot = 0;
    std::vector<int> source_indices;                // per grid cell
    std::vector<std::array<int, 4>> crop_boxes;     // y0, x0, h, w of the winning crop
    std::vector<int> winner_candidate;              // candidate index per cell
    std::vector<float> scores;                      // winning teacher confidence per cell
};

struct PatchBank {
    int num_classes = 0, ipc = 0, channels = 0, d_orig = 0, grid = 1;
    Tensor images;  // [num_classes*ipc, C, D_orig, D_orig]
    std::vector<int> labels;
    std::vector<PatchProvenance> provenance;

    int64_t slot_row(int cls, int slot) const {
        return static_cast<int64_t>(cls) * ipc + slot;
    }
    Tensor rows(const std::vector<int64_t>& which) const;
};

// Confidence-scored random-crop initialization: per slot and grid cell,
// sample patch_candidates crops of a distinct source image, keep the one
// the teacher is most confident about (first wins ties). 2x2 grids tile
// four winners into one image.
PatchBank init_patches(const LabeledDataset& train, const TrainedModel& teacher,
                       const DistillConfig& cfg);

struct StepTrace {
    int step;
    float ce, d_global, total;
    int64_t overflows;
};

struct EntropyPoint {
    int step;
    double pixel_bits, feature_bits;
};

struct GroupResult {
    std::vector<int> classes;
    std::vector<int64_t> bank_rows;  // PatchBank rows in batch order
    Tensor images;                   // final images at D_orig (pre-clamp)
    std::vector<StepTrace> loss_trace;
    std::vector<EntropyPoint> entropy_trace;
    std::vector<int> stage_resolutions;  // one entry per stage, final included
    int64_t grad_steps = 0;
    int64_t arc_merges = 0;
};

// One jointly-optimized batch through the full schedule. `teachers` must
// already match the config's parameter precision; `entropy_teacher` (may
// be null) is used for the feature-entropy trace.
GroupResult distill_group(const DistillConfig& cfg, const std::vector<const TrainedModel*>& teachers,
                          const Tensor& patches, const std::vector<int>& labels,
                          const std::vector<int>& classes, const std::vector<int64_t>& bank_rows,
                          const TrainedModel* entropy_teacher);

GroupResult distill_class(const DistillConfig& cfg, const std::vector<const TrainedModel*>& teachers,
                          const PatchBank& bank, int cls,
                          const TrainedModel* entropy_teacher = nullptr);

struct DistilledSet {
    int num_classes = 0, ipc = 0, d_orig = 0;
    Tensor images;  // [num_classes*ipc, C, D_orig, D_orig], clamped to the normalized range
    std::vector<int> labels;
    Normalization norm;
    PatchBank bank;
    std::vector<GroupResult> groups;
    int64_t total_grad_steps = 0;
    int64_t total_arc_merges = 0;
    double wall_seconds = 0.0;
};

// Full pipeline over all classes: patch init, per-group optimization on a
// worker pool (classes are independent jobs with per-class RNG streams),
// final clamp to the dataset's normalized range.
DistilledSet run_distillation(const DistillConfig& cfg,
                              const std::vector<const TrainedModel*>& teachers,
                              const DatasetPair& data, int workers);

struct TeacherRef {
    std::string path;
    std::string digest;
    std::string arch;
};

void write_distilled_set(const DistilledSet& set, const DistillConfig& cfg,
                         const std::vector<TeacherRef>& teachers, const std::string& data_path,
                         const std::string& data_digest, const std::filesystem::path& out_dir);

// CLI-level run: load dataset (cfg.data) and checkpoints, distill, write
// out_dir (skipped when empty).
DistilledSet distill_from_paths(const DistillConfig& cfg,
                                const std::vector<std::filesystem::path>& teacher_ckpts,
                                const std::filesystem::path& out_dir, int workers);

// Replay source: a run manifest pins the config text plus teacher/data
// paths, which is sufficient to reproduce the run byte for byte.
struct ManifestRun {
    DistillConfig cfg;
    std::vector<std::filesystem::path> teachers;
};
ManifestRun read_run_manifest(const std::filesystem::path& manifest_file);

struct DistilledDir {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0, ipc = 0;
    Normalization norm;
};
DistilledDir load_distilled_dir(const std::filesystem::path& dir);

std::string digest_checkpoint(const std::filesystem::path& dir);

}  // namespace resmatch
