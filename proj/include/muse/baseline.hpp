#pragma once

#include <cstdint>
#include <vector>

#include "muse/data.hpp"
#include "muse/layers.hpp"
#include "muse/model.hpp"

namespace muse {

// Concatenates the row-pooled text and image features (zeros for an absent
// modality) and classifies them with two linear layers.
class ConcatBaseline {
public:
    static ConcatBaseline create(const FeatureDims& dims, std::size_t hidden, std::uint64_t seed);

    ag::Tensor forward(const ModalityBatch& batch) const;  // [B] probabilities
    ag::Tensor loss(const ModalityBatch& batch) const;
    std::vector<NamedTensor> weights() const;
    ConcatBaseline clone() const;

private:
    FeatureDims dims_;
    Linear fc1_, fc2_;
};

struct BaselineResult {
    ConcatBaseline model;
    double best_valid_accuracy = 0.0;
};

// Same schedule as the MUSE retrain: `epochs` passes with best-valid selection.
BaselineResult train_baseline(const Dataset& train, const Dataset& valid, const TrainConfig& config,
                              std::size_t hidden, std::size_t epochs, std::uint64_t seed);

std::vector<double> predict(const ConcatBaseline& model, const Dataset& ds, std::size_t batch_size);

}  // namespace muse
