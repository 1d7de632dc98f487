#pragma once

#include "resmatch/data.hpp"
#include "resmatch/model.hpp"

namespace resmatch {

struct PretrainHyper {
    int epochs = 30;
    int batch = 64;
    float lr = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    float bn_momentum = 0.1f;
    bool augment = true;
    int crop_pad = 4;
    uint64_t seed = 0;
};

// SGD with momentum, weight decay and a per-epoch cosine schedule;
// random-crop + horizontal-flip augmentation. Returns a new model with
// updated parameters, captured BN running statistics and provenance
// (final train/test accuracy); the input model is left untouched.
TrainedModel pretrain(const TrainedModel& model, const DatasetPair& data,
                      const PretrainHyper& hyper);

}  // namespace resmatch
