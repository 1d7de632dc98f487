#pragma once

#include <optional>
#include <span>

#include "resmatch/data.hpp"
#include "resmatch/model.hpp"

namespace resmatch {

// Teacher probability vectors for a set of images (eval mode, temperature-
// scaled softmax). Each row sums to 1.
struct SoftLabelSet {
    Tensor probs;  // [M, num_classes]
    float temperature = 1.0f;
    std::string teacher_id;
};

SoftLabelSet generate_soft_labels(const TrainedModel& teacher, const Tensor& images,
                                  float temperature);

struct StudentHyper {
    int epochs = 120;
    int batch = 16;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-2f;
    int eta = 1;  // cosine horizon multiplier on the schedule length
    bool augment = true;
    float min_crop_scale = 0.5f;
    float bn_momentum = 0.1f;
};

struct EvalReport {
    ModelSpec student;
    StudentHyper hyper;
    std::string label_mode;  // "soft-kl" or "hard-ce"
    std::vector<uint64_t> seeds;
    std::vector<double> accuracies;
    double mean = 0.0;
    double stddev = 0.0;
};

// Trains one student per seed on (images, labels) — with KL to soft labels
// when given, else cross-entropy to the hard labels — and reports top-1
// accuracy on the held-out test split. AdamW with the cosine-eta schedule.
EvalReport train_student(const ModelSpec& student, const Tensor& images,
                         const std::vector<int>& labels, const std::optional<SoftLabelSet>& soft,
                         const StudentHyper& hyper, const LabeledDataset& testset,
                         std::span<const uint64_t> seeds, int workers = 1);

// Top-1 accuracy of argmax logits.
double evaluate(const TrainedModel& model, const Tensor& images, const std::vector<int>& labels);
double evaluate(const TrainedModel& model, const LabeledDataset& testset);

}  // namespace resmatch
