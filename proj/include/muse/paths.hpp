#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muse/cells.hpp"
#include "muse/features.hpp"

namespace muse {

enum class StaticVariant { siamese, cluster_reference };

const char* to_string(StaticVariant v);
StaticVariant parse_static_variant(const std::string& text);

struct FeatureDims {
    std::size_t k_text = 8;
    std::size_t d_text = 16;
    std::size_t k_image = 8;
    std::size_t d_image = 16;

    bool operator==(const FeatureDims&) const = default;
};

// Pools each enhanced matrix over rows, projects both to D_h with bias-free
// FCs and runs the linear chain. Output Z1 is [B x D_h].
class LinearPath {
public:
    LinearPath(const FeatureDims& dims, const CellChainConfig& chain, std::uint64_t seed);
    LinearPath(const FeatureDims& dims, CellChain chain, std::uint64_t seed);

    ag::Tensor forward(const EnhancedPair& pair) const;
    ag::Tensor score(const ag::Tensor& z) const;  // [B]

    CellChain& chain() { return chain_; }
    const CellChain& chain() const { return chain_; }
    void collect_weights(std::vector<NamedTensor>& out) const;

private:
    Linear fc_text_, fc_image_, head_;
    CellChain chain_;
};

// Projects every row of both enhanced matrices to D_h, concatenates them
// along the sequence axis and runs the sequence chain; Z2 is the mean over
// positions of the last cell, [B x D_h].
class SequencePath {
public:
    SequencePath(const FeatureDims& dims, const CellChainConfig& chain, std::uint64_t seed);
    SequencePath(const FeatureDims& dims, CellChain chain, std::uint64_t seed);

    ag::Tensor forward(const EnhancedPair& pair) const;
    ag::Tensor score(const ag::Tensor& z) const;

    CellChain& chain() { return chain_; }
    const CellChain& chain() const { return chain_; }
    void collect_weights(std::vector<NamedTensor>& out) const;

private:
    Linear fc_text_, fc_image_, head_;
    CellChain chain_;
};

// Fixed-structure similarity network: bias-free per-modality input
// projections, one shared two-layer encoder, and
// Z3 = [cos(e_t, e_i), |e_t - e_i|] of width 1 + D_h. The embedding of an
// absent modality is the zero vector.
class SiamesePath {
public:
    SiamesePath(const FeatureDims& dims, std::size_t hidden, std::uint64_t seed);

    ag::Tensor encode(const ag::Tensor& x) const;  // shared encoder on [.. x D_h]
    ag::Tensor forward(const EnhancedPair& pair, const std::vector<bool>& has_text,
                       const std::vector<bool>& has_image) const;
    ag::Tensor score(const ag::Tensor& z) const;
    void collect_weights(std::vector<NamedTensor>& out) const;

private:
    Linear in_text_, in_image_, enc1_, enc2_, head_;
};

// k-means with deterministic farthest-point seeding. The first center is the
// lexicographically smallest point and each next one is the point farthest
// from the chosen centers (lexicographic tie-break), so the clustering does
// not depend on sample order. Ties in assignment go to the lowest center.
std::vector<std::size_t> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                                std::size_t max_iterations = 20);

// Leave-one-out cluster mean of the reference scores; a singleton cluster
// keeps its own score.
std::vector<double> cluster_reference(const std::vector<std::size_t>& assignment, std::span<const double> scores);

// In-batch sample reference: clusters the pooled enhanced features and
// returns Z3 = leave-one-out cluster mean of `scores` as a constant [B x 1].
class ClusterReferencePath {
public:
    ClusterReferencePath(std::size_t clusters, std::uint64_t seed);

    ag::Tensor forward(const EnhancedPair& pair, std::span<const double> scores) const;
    ag::Tensor score(const ag::Tensor& z) const;
    std::size_t clusters() const { return clusters_; }
    void collect_weights(std::vector<NamedTensor>& out) const;

private:
    std::size_t clusters_;
    Linear head_;
};

}  // namespace muse
