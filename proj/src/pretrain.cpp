#include "resmatch/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "resmatch/errors.hpp"
#include "resmatch/evaluate.hpp"
#include "resmatch/util.hpp"

namespace resmatch {

namespace {

struct SgdSlot {
    Tensor* param;
    std::vector<float> velocity;
};

void update_running_stats(TrainedModel& model, const std::vector<BnStats>& stats, Tape& tape,
                          float momentum) {
    for (const auto& st : stats) {
        const Tensor mu = tape.value(st.mean);
        const Tensor var = tape.value(st.var);
        // The recorded layer pointer aliases the live model through shared
        // tensor storage, so writing through it updates the model buffers.
        Tensor rm = st.bn->running_mean;
        Tensor rv = st.bn->running_var;
        for (int c = 0; c < mu.dim(0); ++c) {
            rm.set(c, (1.0f - momentum) * rm.at(c) + momentum * mu.at(c));
            rv.set(c, (1.0f - momentum) * rv.at(c) + momentum * var.at(c));
        }
    }
}

}  // namespace

TrainedModel pretrain(const TrainedModel& input, const DatasetPair& data,
                      const PretrainHyper& hyper) {
    const LabeledDataset& train = data.train;
    if (train.size() == 0) throw ContractError("pretrain: empty training dataset");
    if (train.num_classes != input.spec.num_classes)
        throw ContractError("pretrain: dataset has " + std::to_string(train.num_classes) +
                            " classes, model spec expects " +
                            std::to_string(input.spec.num_classes));

    TrainedModel model = input.clone();

    std::vector<SgdSlot> slots;
    model.for_each_param([&](const std::string&, Tensor& t) {
        slots.push_back({&t, std::vector<float>(static_cast<std::size_t>(t.numel()), 0.0f)});
    });

    const int n = static_cast<int>(train.size());
    const int c = train.images.dim(1);
    const int h = train.images.dim(2);
    const int w = train.images.dim(3);

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const float lr = hyper.lr * 0.5f *
                         (1.0f + std::cos(std::numbers::pi_v<float> * static_cast<float>(epoch) /
                                          static_cast<float>(hyper.epochs)));
        auto shuffle_rng = make_rng(hyper.seed, 0x5FF1Eull, static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        auto aug_rng = make_rng(hyper.seed, 0xA46ull, static_cast<uint64_t>(epoch));

        for (int start = 0; start < n; start += hyper.batch) {
            const int bs = std::min(hyper.batch, n - start);
            Tensor batch = Tensor::zeros({bs, c, h, w});
            std::vector<int> labels(static_cast<std::size_t>(bs));
            for (int i = 0; i < bs; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                Tensor img = take_sample(train.images, src);
                if (hyper.augment) {
                    img = random_crop_pad(img, hyper.crop_pad, aug_rng);
                    if (std::uniform_real_distribution<float>(0.0f, 1.0f)(aug_rng) < 0.5f)
                        img = hflip(img);
                }
                put_sample(batch, i, img);
                labels[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(src)];
            }

            Tape tape;
            ForwardOptions opts;
            opts.mode = RunMode::train;
            opts.param_grads = true;
            ForwardValues fv = forward_model(tape, model, tape.constant(batch), opts);
            Value loss = ops::softmax_cross_entropy(tape, fv.logits, labels);
            tape.backward(loss);
            update_running_stats(model, fv.bn_stats, tape, hyper.bn_momentum);

            for (auto& slot : slots) {
                Tensor& p = *slot.param;
                const auto& g = p.grad_const();
                auto vals = p.f32();
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    const float grad = g[i] + hyper.weight_decay * vals[i];
                    slot.velocity[i] = hyper.momentum * slot.velocity[i] + grad;
                    vals[i] -= lr * slot.velocity[i];
                }
                p.zero_grad();
            }
        }
    }

    model.for_each_param([](const std::string&, Tensor& t) { t.drop_grad(); });

    model.provenance.dataset_id = train.source_id;
    model.provenance.dataset_digest = train.digest();
    model.provenance.epochs = hyper.epochs;
    model.provenance.seed = hyper.seed;
    model.provenance.lr = hyper.lr;
    model.provenance.momentum = hyper.momentum;
    model.provenance.weight_decay = hyper.weight_decay;
    model.provenance.batch = hyper.batch;
    model.provenance.train_accuracy = evaluate(model, train);
    model.provenance.test_accuracy = data.test.size() > 0 ? evaluate(model, data.test) : 0.0;
    return model;
}

}  // namespace resmatch
