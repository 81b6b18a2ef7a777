#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "muse/layers.hpp"
#include "muse/tensor.hpp"

namespace muse {

enum class Modality { text, image };

const char* to_string(Modality m);

// Per-modality local features (K rows of width D) with a presence flag. An
// absent modality holds an all-zero placeholder of the configured shape.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    static FeatureMatrix present(Modality modality, ag::Tensor values);
    static FeatureMatrix absent(Modality modality, std::size_t rows, std::size_t cols);

    Modality modality() const { return modality_; }
    std::size_t rows() const { return values_.dim(0); }
    std::size_t cols() const { return values_.dim(1); }
    bool is_present() const { return present_; }

    // Reading the placeholder of an absent modality is counted so callers can
    // assert that missing inputs are never consumed.
    const ag::Tensor& values() const;
    std::size_t absent_reads() const { return absent_reads_ ? absent_reads_->load() : 0; }

    // Number of leading non-padding rows, when the producer recorded it.
    std::optional<std::uint32_t> valid_rows;

private:
    Modality modality_ = Modality::text;
    bool present_ = false;
    ag::Tensor values_;
    std::shared_ptr<std::atomic<std::size_t>> absent_reads_;
};

// Enhanced features; rank 2 ([K x D]) for one sample or rank 3 for a batch.
struct EnhancedPair {
    ag::Tensor text;
    ag::Tensor image;
};

// Features for a batch of samples. Absent modalities are zero-filled without
// touching the sample's placeholder.
struct ModalityBatch {
    ag::Tensor text;   // [B x K_T x D_T]
    ag::Tensor image;  // [B x K_V x D_V]
    std::vector<bool> has_text;
    std::vector<bool> has_image;
    std::vector<double> labels;

    std::size_t size() const { return labels.size(); }
};

// Cross-modal guidance projections: `text` maps the image global vector to
// D_T, `image` maps the text global vector to D_V.
struct GuidanceLayers {
    Linear text;
    Linear image;

    static GuidanceLayers create(std::uint64_t seed, std::size_t d_text, std::size_t d_image);
    void collect(std::vector<NamedTensor>& out) const;
};

// Column-wise mean over rows. Throws ContractError for an absent modality.
ag::Tensor global_pool(const FeatureMatrix& f);

// Mean over the row axis (second to last) of a [.. x K x D] tensor.
ag::Tensor pool_rows(const ag::Tensor& local);

// (1 + Norm(d)) * local with d = local * FC(other_global) broadcast over rows
// and Norm the per-row L2 normalization (zero rows stay zero). Works on a
// single [K x D] matrix with a [D_o] global vector, or batched with leading
// batch axes on both arguments.
ag::Tensor enhance(const ag::Tensor& local, const ag::Tensor& other_global, const Linear& fc);

// Missing-modality rule: both present -> each side enhanced under the
// other's global guidance; one side absent -> that side is zero and the
// present side passes through unenhanced. Both absent is a DataError.
EnhancedPair apply_partial_rule(const FeatureMatrix& text, const FeatureMatrix& image, const GuidanceLayers& fc);
EnhancedPair apply_partial_rule(const ModalityBatch& batch, const GuidanceLayers& fc);

}  // namespace muse
