#include "resmatch/evaluate.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "resmatch/errors.hpp"
#include "resmatch/ops.hpp"
#include "resmatch/util.hpp"

namespace resmatch {

SoftLabelSet generate_soft_labels(const TrainedModel& teacher, const Tensor& images,
                                  float temperature) {
    if (!(temperature > 0.0f)) throw ContractError("soft labels: temperature must be > 0");
    SoftLabelSet out;
    out.temperature = temperature;
    out.teacher_id = std::string(arch_name(teacher.spec.arch)) + ":" +
                     teacher.provenance.dataset_id;
    out.probs = ops::softmax(eval_logits(teacher, images), temperature);
    return out;
}

double evaluate(const TrainedModel& model, const Tensor& images, const std::vector<int>& labels) {
    if (images.dim(0) != static_cast<int>(labels.size()))
        throw ContractError("evaluate: image/label count mismatch");
    if (labels.empty()) throw DataError("evaluate: empty test set");
    const std::vector<int> pred = ops::argmax_rows(eval_logits(model, images));
    int64_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const TrainedModel& model, const LabeledDataset& testset) {
    if (testset.size() == 0) throw DataError("evaluate: dataset has no test split");
    return evaluate(model, testset.images, testset.labels);
}

namespace {

struct AdamSlot {
    Tensor* param;
    std::vector<float> m, v;
};

double train_one_student(const ModelSpec& spec, const Tensor& images,
                         const std::vector<int>& labels, const std::optional<SoftLabelSet>& soft,
                         const StudentHyper& hyper, const LabeledDataset& testset, uint64_t seed) {
    TrainedModel model = build_model(spec, seed);
    if (hyper.epochs == 0) return evaluate(model, testset);

    std::vector<AdamSlot> slots;
    model.for_each_param([&](const std::string&, Tensor& t) {
        const auto n = static_cast<std::size_t>(t.numel());
        slots.push_back({&t, std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
    });

    const int n = images.dim(0);
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const int k = soft ? soft->probs.dim(1) : spec.num_classes;
    const int steps_per_epoch = (n + hyper.batch - 1) / hyper.batch;
    const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * hyper.epochs;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    int64_t step = 0;
    int64_t adam_t = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        auto shuffle_rng = make_rng(seed, 0x57E9ull, static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        auto aug_rng = make_rng(seed, 0xA9ull, static_cast<uint64_t>(epoch));

        for (int start = 0; start < n; start += hyper.batch, ++step) {
            const int bs = std::min(hyper.batch, n - start);
            Tensor batch = Tensor::zeros({bs, c, h, w});
            std::vector<int> hard(static_cast<std::size_t>(bs));
            Tensor targets = soft ? Tensor::zeros({bs, k}) : Tensor();
            for (int i = 0; i < bs; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                Tensor img = take_sample(images, src);
                if (hyper.augment) {
                    img = random_resized_crop(img, hyper.min_crop_scale, aug_rng);
                    if (std::uniform_real_distribution<float>(0.0f, 1.0f)(aug_rng) < 0.5f)
                        img = hflip(img);
                }
                put_sample(batch, i, img);
                hard[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
                if (soft)
                    std::memcpy(targets.f32().data() + static_cast<int64_t>(i) * k,
                                soft->probs.f32().data() + static_cast<int64_t>(src) * k,
                                static_cast<std::size_t>(k) * sizeof(float));
            }

            // Cosine-eta multiplier on the base learning rate.
            const float mult =
                0.5f * (1.0f + std::cos(std::numbers::pi_v<float> * static_cast<float>(step) /
                                        (static_cast<float>(total_steps) *
                                         static_cast<float>(hyper.eta))));
            const float lr = hyper.lr * mult;

            Tape tape;
            ForwardOptions opts;
            opts.mode = RunMode::train;
            opts.param_grads = true;
            ForwardValues fv = forward_model(tape, model, tape.constant(batch), opts);
            Value loss = soft ? ops::kl_divergence(tape, fv.logits, targets)
                              : ops::softmax_cross_entropy(tape, fv.logits, hard);
            tape.backward(loss);

            for (const auto& st : fv.bn_stats) {
                const Tensor mu = tape.value(st.mean);
                const Tensor var = tape.value(st.var);
                Tensor rm = st.bn->running_mean;
                Tensor rv = st.bn->running_var;
                for (int ch = 0; ch < mu.dim(0); ++ch) {
                    rm.set(ch, (1.0f - hyper.bn_momentum) * rm.at(ch) + hyper.bn_momentum * mu.at(ch));
                    rv.set(ch, (1.0f - hyper.bn_momentum) * rv.at(ch) + hyper.bn_momentum * var.at(ch));
                }
            }

            ++adam_t;
            const float bc1 = 1.0f - std::pow(hyper.beta1, static_cast<float>(adam_t));
            const float bc2 = 1.0f - std::pow(hyper.beta2, static_cast<float>(adam_t));
            for (auto& slot : slots) {
                Tensor& p = *slot.param;
                const auto& g = p.grad_const();
                auto vals = p.f32();
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    slot.m[i] = hyper.beta1 * slot.m[i] + (1.0f - hyper.beta1) * g[i];
                    slot.v[i] = hyper.beta2 * slot.v[i] + (1.0f - hyper.beta2) * g[i] * g[i];
                    const float mhat = slot.m[i] / bc1;
                    const float vhat = slot.v[i] / bc2;
                    // AdamW: decoupled weight decay.
                    vals[i] -= lr * (mhat / (std::sqrt(vhat) + hyper.eps) +
                                     hyper.weight_decay * vals[i]);
                }
                p.zero_grad();
            }
        }
    }
    return evaluate(model, testset);
}

}  // namespace

EvalReport train_student(const ModelSpec& student, const Tensor& images,
                         const std::vector<int>& labels, const std::optional<SoftLabelSet>& soft,
                         const StudentHyper& hyper, const LabeledDataset& testset,
                         std::span<const uint64_t> seeds, int workers) {
    if (images.ndim() != 4) throw ShapeError("train_student: images must be [N,C,H,W]");
    if (images.dim(0) != static_cast<int>(labels.size()))
        throw ContractError("train_student: image/label count mismatch");
    if (testset.size() == 0) throw DataError("train_student: missing test split");
    if (images.dim(2) != student.in_h || images.dim(3) != student.in_w)
        throw ShapeError("train_student: images are " + images.shape_string() +
                         " but student expects " + std::to_string(student.in_h) + "x" +
                         std::to_string(student.in_w));
    if (soft && soft->probs.dim(0) != images.dim(0))
        throw ContractError("train_student: soft label count does not match images");
    if (seeds.empty()) throw ContractError("train_student: need at least one seed");

    EvalReport report;
    report.student = student;
    report.hyper = hyper;
    report.label_mode = soft ? "soft-kl" : "hard-ce";
    report.seeds.assign(seeds.begin(), seeds.end());
    report.accuracies.resize(seeds.size());

    run_parallel(static_cast<int>(seeds.size()), workers, [&](int i) {
        report.accuracies[static_cast<std::size_t>(i)] = train_one_student(
            student, images, labels, soft, hyper, testset, seeds[static_cast<std::size_t>(i)]);
    });

    double sum = 0.0;
    for (double a : report.accuracies) sum += a;
    report.mean = sum / static_cast<double>(report.accuracies.size());
    double var = 0.0;
    for (double a : report.accuracies) var += (a - report.mean) * (a - report.mean);
    report.stddev = std::sqrt(var / static_cast<double>(report.accuracies.size()));
    return report;
}

}  // namespace resmatch
