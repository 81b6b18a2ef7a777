#include "muse/baseline.hpp"

#include <numeric>

#include "muse/errors.hpp"
#include "muse/features.hpp"
#include "muse/rng.hpp"

namespace muse {

using ag::Tensor;

ConcatBaseline ConcatBaseline::create(const FeatureDims& dims, std::size_t hidden, std::uint64_t seed) {
    if (hidden < 1) throw ConfigError("baseline hidden width must be at least 1");
    ConcatBaseline b;
    b.dims_ = dims;
    b.fc1_ = Linear::create(seed, "baseline.fc1", dims.d_text + dims.d_image, hidden);
    b.fc2_ = Linear::create(seed, "baseline.fc2", hidden, 1);
    return b;
}

Tensor ConcatBaseline::forward(const ModalityBatch& batch) const {
    if (batch.size() == 0) throw DataError("empty batch");
    Tensor x = ag::concat({pool_rows(batch.text), pool_rows(batch.image)}, 1);
    Tensor logit = fc2_(ag::relu(fc1_(x)));
    return ag::sigmoid(ag::reshape(logit, {batch.size()}));
}

Tensor ConcatBaseline::loss(const ModalityBatch& batch) const { return ag::bce(forward(batch), batch.labels); }

std::vector<NamedTensor> ConcatBaseline::weights() const {
    std::vector<NamedTensor> out;
    fc1_.collect(out);
    fc2_.collect(out);
    return out;
}

ConcatBaseline ConcatBaseline::clone() const {
    ConcatBaseline b = create(dims_, fc1_.out_features(), 0);
    copy_parameters(weights(), b.weights());
    return b;
}

std::vector<double> predict(const ConcatBaseline& model, const Dataset& ds, std::size_t batch_size) {
    if (ds.empty()) throw DataError("cannot evaluate on an empty dataset");
    ag::NoGradGuard guard;
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> probs;
    for (const auto& b : make_batches(order, batch_size, 1)) {
        auto y = model.forward(make_batch(ds, b));
        probs.insert(probs.end(), y.values().begin(), y.values().end());
    }
    return probs;
}

BaselineResult train_baseline(const Dataset& train, const Dataset& valid, const TrainConfig& config,
                              std::size_t hidden, std::size_t epochs, std::uint64_t seed) {
    if (train.empty() || valid.empty()) throw DataError("baseline training needs non-empty train and valid splits");
    ConcatBaseline model = ConcatBaseline::create(train.dims, hidden, seed);
    Optimizer opt(config.optimizer);
    const auto weights = model.weights();
    BaselineResult result{model.clone(), accuracy(predict(model, valid, config.batch_size), valid)};
    const Rng shuffle(seed, "baseline.shuffle");
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng = shuffle.split(epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (const auto& b : make_batches(order, config.batch_size, 1)) {
            Tensor loss = model.loss(make_batch(train, b));
            ag::backward(loss);
            opt.step(weights);
            zero_grad(weights);
        }
        const double acc = accuracy(predict(model, valid, config.batch_size), valid);
        if (acc > result.best_valid_accuracy) {
            result.best_valid_accuracy = acc;
            result.model = model.clone();
        }
    }
    return result;
}

}  // namespace muse
