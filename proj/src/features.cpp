#include "muse/features.hpp"

#include "muse/errors.hpp"

namespace muse {

const char* to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

FeatureMatrix FeatureMatrix::present(Modality modality, ag::Tensor values) {
    if (!values.defined() || values.rank() != 2) {
        throw DimensionError(std::string(to_string(modality)) + " features must be a K x D matrix");
    }
    FeatureMatrix f;
    f.modality_ = modality;
    f.present_ = true;
    f.values_ = std::move(values);
    return f;
}

FeatureMatrix FeatureMatrix::absent(Modality modality, std::size_t rows, std::size_t cols) {
    FeatureMatrix f;
    f.modality_ = modality;
    f.present_ = false;
    f.values_ = ag::Tensor::zeros({rows, cols});
    f.absent_reads_ = std::make_shared<std::atomic<std::size_t>>(0);
    return f;
}

const ag::Tensor& FeatureMatrix::values() const {
    if (!present_) absent_reads_->fetch_add(1);
    return values_;
}

GuidanceLayers GuidanceLayers::create(std::uint64_t seed, std::size_t d_text, std::size_t d_image) {
    return {Linear::create(seed, "guide.text", d_image, d_text), Linear::create(seed, "guide.image", d_text, d_image)};
}

void GuidanceLayers::collect(std::vector<NamedTensor>& out) const {
    text.collect(out);
    image.collect(out);
}

ag::Tensor global_pool(const FeatureMatrix& f) {
    if (!f.is_present()) {
        throw ContractError(std::string("global_pool on absent ") + to_string(f.modality()) + " modality");
    }
    return ag::mean(f.values(), 0);
}

ag::Tensor pool_rows(const ag::Tensor& local) {
    if (local.rank() < 2) throw DimensionError("pool_rows expects [.. x K x D], got " + ag::shape_str(local.shape()));
    return ag::mean(local, local.rank() - 2);
}

ag::Tensor enhance(const ag::Tensor& local, const ag::Tensor& other_global, const Linear& fc) {
    if (local.rank() < 2 || other_global.rank() + 1 != local.rank()) {
        throw DimensionError("enhance: local " + ag::shape_str(local.shape()) + " incompatible with global " +
                             ag::shape_str(other_global.shape()));
    }
    ag::Tensor guide = fc(other_global);
    if (guide.shape().back() != local.shape().back()) {
        throw DimensionError("enhance: guidance projection yields width " + std::to_string(guide.shape().back()) +
                             " but local features have width " + std::to_string(local.shape().back()));
    }
    const std::size_t row_axis = local.rank() - 2;
    ag::Tensor d = ag::mul(local, ag::expand(guide, row_axis, local.dim(row_axis)));
    return ag::add(local, ag::mul(ag::l2_normalize(d), local));
}

EnhancedPair apply_partial_rule(const FeatureMatrix& text, const FeatureMatrix& image, const GuidanceLayers& fc) {
    if (!text.is_present() && !image.is_present()) throw DataError("sample has neither text nor image");
    if (text.is_present() && image.is_present()) {
        const ag::Tensor& w = text.values();
        const ag::Tensor& v = image.values();
        return {enhance(w, ag::mean(v, 0), fc.text), enhance(v, ag::mean(w, 0), fc.image)};
    }
    // Shapes come from the placeholder's metadata, not its values.
    if (!text.is_present()) {
        return {ag::Tensor::zeros({text.rows(), text.cols()}), image.values()};
    }
    return {text.values(), ag::Tensor::zeros({image.rows(), image.cols()})};
}

namespace {

// [B x K x D] mask that is 1 on samples where `keep[b]` holds.
ag::Tensor sample_mask(const ag::Shape& shape, const std::vector<bool>& keep) {
    const std::size_t per = shape[1] * shape[2];
    std::vector<double> m(shape[0] * per, 0.0);
    for (std::size_t b = 0; b < shape[0]; ++b) {
        if (keep[b]) std::fill_n(m.begin() + b * per, per, 1.0);
    }
    return ag::Tensor::from(shape, std::move(m));
}

}  // namespace

EnhancedPair apply_partial_rule(const ModalityBatch& batch, const GuidanceLayers& fc) {
    const std::size_t n = batch.size();
    if (batch.text.rank() != 3 || batch.image.rank() != 3 || batch.text.dim(0) != n || batch.image.dim(0) != n) {
        throw DimensionError("apply_partial_rule: batch tensors must be [B x K x D]");
    }
    std::vector<bool> both(n), text_only(n), image_only(n);
    bool any_both = false;
    for (std::size_t b = 0; b < n; ++b) {
        if (!batch.has_text[b] && !batch.has_image[b]) {
            throw DataError("sample " + std::to_string(b) + " of batch has neither text nor image");
        }
        both[b] = batch.has_text[b] && batch.has_image[b];
        text_only[b] = batch.has_text[b] && !batch.has_image[b];
        image_only[b] = !batch.has_text[b] && batch.has_image[b];
        any_both = any_both || both[b];
    }
    ag::Tensor text = ag::mul(batch.text, sample_mask(batch.text.shape(), text_only));
    ag::Tensor image = ag::mul(batch.image, sample_mask(batch.image.shape(), image_only));
    if (any_both) {
        ag::Tensor w_enh = enhance(batch.text, pool_rows(batch.image), fc.text);
        ag::Tensor v_enh = enhance(batch.image, pool_rows(batch.text), fc.image);
        text = ag::add(text, ag::mul(w_enh, sample_mask(batch.text.shape(), both)));
        image = ag::add(image, ag::mul(v_enh, sample_mask(batch.image.shape(), both)));
    }
    return {text, image};
}

}  // namespace muse
