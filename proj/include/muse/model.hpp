#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "muse/data.hpp"
#include "muse/optim.hpp"
#include "muse/paths.hpp"

namespace muse {

enum class CombinerMode { sigmoid, softmax_weights };

const char* to_string(CombinerMode mode);
CombinerMode parse_combiner_mode(const std::string& text);

struct PathSet {
    bool linear = true;
    bool sequence = true;
    bool aux = true;  // the static path

    bool operator==(const PathSet&) const = default;
    std::size_t count() const { return linear + sequence + aux; }
};

// "all" or a comma list of linear, sequence, static.
PathSet parse_path_set(const std::string& text);
std::string to_string(const PathSet& paths);

struct ModelConfig {
    FeatureDims dims;
    std::size_t hidden = 8;
    std::size_t linear_depth = 3;
    std::size_t sequence_depth = 3;
    Topology topology = Topology::chain;
    std::vector<std::string> linear_fusion_ops;       // empty: full registry
    std::vector<std::string> linear_transform_ops;    // empty: full registry
    std::vector<std::string> sequence_transform_ops;  // empty: full registry
    PathSet paths;
    StaticVariant static_variant = StaticVariant::siamese;
    std::size_t clusters = 2;
    CombinerMode combiner = CombinerMode::softmax_weights;
    std::uint64_t seed = 1;
};

struct ModelArchitecture {
    Architecture linear;
    Architecture sequence;

    bool operator==(const ModelArchitecture&) const = default;
};

// Path scores are raw head outputs; undefined tensors for disabled paths.
struct Prediction {
    ag::Tensor y;  // [B] probabilities
    ag::Tensor y1, y2, y3;
    ag::Tensor z1, z2, z3;
};

// Scale(.) squashes a raw path score to (0, 1).
ag::Tensor scale_score(const ag::Tensor& score);

// sigmoid: y = sigmoid(beta*s1 + gamma*s2 + delta*s3) over the scaled scores.
// softmax_weights: y = sum_i softmax(beta, gamma, delta)_i * s_i.
// Undefined score tensors are dropped together with their weight.
ag::Tensor combine(const ag::Tensor& y1, const ag::Tensor& y2, const ag::Tensor& y3, const ag::Tensor& beta,
                   const ag::Tensor& gamma, const ag::Tensor& delta, CombinerMode mode);

class Model {
public:
    static Model create(const ModelConfig& config);
    static Model create(const ModelConfig& config, const ModelArchitecture& arch, bool discrete);

    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return config_; }
    bool discrete() const { return discrete_; }

    Prediction forward(const ModalityBatch& batch) const;
    ag::Tensor loss(const ModalityBatch& batch) const;

    // Network weights w, including the combiner scalars (a frozen delta is
    // left out).
    std::vector<NamedTensor> weights() const;
    // Architecture logits alpha; empty for a discrete model.
    std::vector<NamedTensor> arch() const;
    // Everything that is saved in a checkpoint.
    std::vector<NamedTensor> all_parameters() const;

    ModelArchitecture architecture() const;
    std::string genotype() const;

    Model clone() const;
    Model discretize() const;
    // Prunes the transformation edges of one dynamic path.
    Model prune_lowest(PathKind kind) const;

    const ag::Tensor& beta() const { return beta_; }
    const ag::Tensor& gamma() const { return gamma_; }
    const ag::Tensor& delta() const { return delta_; }
    void set_delta(double value);
    void freeze_delta(bool frozen) { delta_frozen_ = frozen; }
    // Freezes delta at the value that removes the static path from the
    // combination: 0 for sigmoid, -inf for softmax_weights.
    void knock_out_static();
    bool delta_frozen() const { return delta_frozen_; }

    LinearPath* linear_path() { return linear_ ? &*linear_ : nullptr; }
    const LinearPath* linear_path() const { return linear_ ? &*linear_ : nullptr; }
    SequencePath* sequence_path() { return sequence_ ? &*sequence_ : nullptr; }
    const SequencePath* sequence_path() const { return sequence_ ? &*sequence_ : nullptr; }
    const CellChain* chain(PathKind kind) const;
    CellChain* chain(PathKind kind);

private:
    Model() = default;

    ModelConfig config_;
    bool discrete_ = false;
    GuidanceLayers guide_;
    std::optional<LinearPath> linear_;
    std::optional<SequencePath> sequence_;
    std::optional<SiamesePath> siamese_;
    std::optional<ClusterReferencePath> cluster_;
    ag::Tensor beta_, gamma_, delta_;
    bool delta_frozen_ = false;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t search_epochs = 20;
    std::size_t retrain_epochs = 10;
    OptimizerConfig optimizer{OptimizerConfig::Method::adam, 2e-2};  // network weights
    double arch_lr = 3e-3;      // Adam on alpha; 0 disables architecture updates
    bool warm_start = true;
};

// Contiguous batches of `size`; a final batch smaller than `min_size` is
// merged into the previous one.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t size,
                                                   std::size_t min_size);

struct SearchResult {
    Model model;
    std::vector<std::string> genotypes;  // snapshot after each epoch
    std::vector<double> epoch_loss;      // mean training loss per epoch
};

// First-order bilevel search: each step updates w on a training batch, then
// alpha on a validation batch.
SearchResult bilevel_search(Model model, const Dataset& train, const Dataset& valid, const TrainConfig& config,
                            std::uint64_t seed);

struct TrainResult {
    Model model;
    double best_valid_accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::vector<double> epoch_loss;
};

// Trains the network weights with alpha held fixed, keeping the checkpoint
// with the best validation accuracy (the starting state counts as epoch 0).
TrainResult train_weights(Model model, const Dataset& train, const Dataset& valid, const TrainConfig& config,
                          std::uint64_t seed, const std::string& stream);

// Discretizes (warm start keeps the searched parameters; otherwise the
// discrete model is freshly initialized) and retrains.
TrainResult retrain_discrete(const Model& searched, const Dataset& train, const Dataset& valid,
                             const TrainConfig& config, std::uint64_t seed);

// Probabilities in dataset order, evaluated batch by batch.
std::vector<double> predict(const Model& model, const Dataset& ds, std::size_t batch_size);
double accuracy(std::span<const double> probs, const Dataset& ds);

struct Checkpoint {
    Model model;
    std::string config_echo;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path, const std::string& config_echo,
                     std::uint64_t seed, std::size_t epochs);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const Model& model, const std::string& config_echo, std::uint64_t seed,
                            std::size_t epochs);
Checkpoint checkpoint_from_json(const std::string& text);

}  // namespace muse
