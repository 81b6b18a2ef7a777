#include "muse/paths.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "muse/errors.hpp"

namespace muse {

using ag::Tensor;

const char* to_string(StaticVariant v) { return v == StaticVariant::siamese ? "siamese" : "cluster_reference"; }

StaticVariant parse_static_variant(const std::string& text) {
    if (text == "siamese") return StaticVariant::siamese;
    if (text == "cluster_reference") return StaticVariant::cluster_reference;
    throw ConfigError("static_path.variant must be siamese or cluster_reference, got '" + text + "'");
}

namespace {

// [B x 1] -> [B]
Tensor flatten_score(const Tensor& s) { return ag::reshape(s, {s.dim(0)}); }

Tensor row_mask(std::size_t batch, std::size_t width, const std::vector<bool>& keep) {
    std::vector<double> m(batch * width, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        if (keep[b]) std::fill_n(m.begin() + b * width, width, 1.0);
    return Tensor::from({batch, width}, std::move(m));
}

}  // namespace

LinearPath::LinearPath(const FeatureDims& dims, const CellChainConfig& chain, std::uint64_t seed)
    : LinearPath(dims, CellChain::create(chain), seed) {}

LinearPath::LinearPath(const FeatureDims& dims, CellChain chain, std::uint64_t seed)
    : fc_text_(Linear::create(seed, "linear.fc_text", dims.d_text, chain.config().hidden, false)),
      fc_image_(Linear::create(seed, "linear.fc_image", dims.d_image, chain.config().hidden, false)),
      head_(Linear::create(seed, "linear.head", chain.config().hidden, 1)),
      chain_(std::move(chain)) {
    if (chain_.kind() != PathKind::linear) throw ConfigError("linear path needs a linear chain");
}

Tensor LinearPath::forward(const EnhancedPair& pair) const {
    return chain_.forward(fc_text_(pool_rows(pair.text)), fc_image_(pool_rows(pair.image)));
}

Tensor LinearPath::score(const Tensor& z) const { return flatten_score(head_(z)); }

void LinearPath::collect_weights(std::vector<NamedTensor>& out) const {
    fc_text_.collect(out);
    fc_image_.collect(out);
    chain_.collect_weights(out);
    head_.collect(out);
}

SequencePath::SequencePath(const FeatureDims& dims, const CellChainConfig& chain, std::uint64_t seed)
    : SequencePath(dims, CellChain::create(chain), seed) {}

SequencePath::SequencePath(const FeatureDims& dims, CellChain chain, std::uint64_t seed)
    : fc_text_(Linear::create(seed, "sequence.fc_text", dims.d_text, chain.config().hidden, false)),
      fc_image_(Linear::create(seed, "sequence.fc_image", dims.d_image, chain.config().hidden, false)),
      head_(Linear::create(seed, "sequence.head", chain.config().hidden, 1)),
      chain_(std::move(chain)) {
    if (chain_.kind() != PathKind::sequence) throw ConfigError("sequence path needs a sequence chain");
}

Tensor SequencePath::forward(const EnhancedPair& pair) const {
    return chain_.forward(fc_text_(pair.text), fc_image_(pair.image));
}

Tensor SequencePath::score(const Tensor& z) const { return flatten_score(head_(z)); }

void SequencePath::collect_weights(std::vector<NamedTensor>& out) const {
    fc_text_.collect(out);
    fc_image_.collect(out);
    chain_.collect_weights(out);
    head_.collect(out);
}

SiamesePath::SiamesePath(const FeatureDims& dims, std::size_t hidden, std::uint64_t seed)
    : in_text_(Linear::create(seed, "static.in_text", dims.d_text, hidden, false)),
      in_image_(Linear::create(seed, "static.in_image", dims.d_image, hidden, false)),
      enc1_(Linear::create(seed, "static.encoder1", hidden, hidden)),
      enc2_(Linear::create(seed, "static.encoder2", hidden, hidden)),
      head_(Linear::create(seed, "static.head", hidden + 1, 1)) {}

Tensor SiamesePath::encode(const Tensor& x) const { return enc2_(ag::tanh(enc1_(x))); }

Tensor SiamesePath::forward(const EnhancedPair& pair, const std::vector<bool>& has_text,
                            const std::vector<bool>& has_image) const {
    Tensor et = encode(in_text_(pool_rows(pair.text)));
    Tensor ei = encode(in_image_(pool_rows(pair.image)));
    const std::size_t batch = et.dim(0), width = et.dim(1);
    if (has_text.size() != batch || has_image.size() != batch) throw DimensionError("siamese path: mask length");
    et = ag::mul(et, row_mask(batch, width, has_text));
    ei = ag::mul(ei, row_mask(batch, width, has_image));
    Tensor cos = ag::reshape(ag::cosine_similarity(et, ei), {batch, 1});
    return ag::concat({cos, ag::abs(ag::sub(et, ei))}, 1);
}

Tensor SiamesePath::score(const Tensor& z) const { return flatten_score(head_(z)); }

void SiamesePath::collect_weights(std::vector<NamedTensor>& out) const {
    for (const Linear* l : {&in_text_, &in_image_, &enc1_, &enc2_, &head_}) l->collect(out);
}

std::vector<std::size_t> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                                std::size_t max_iterations) {
    const std::size_t n = points.size();
    if (k < 1) throw ConfigError("cluster count must be at least 1");
    if (k > n) {
        throw ConfigError("cluster count " + std::to_string(k) + " exceeds batch size " + std::to_string(n));
    }
    auto dist2 = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return s;
    };
    std::vector<std::vector<double>> centers;
    centers.push_back(*std::min_element(points.begin(), points.end()));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        std::size_t pick = 0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], dist2(points[i], centers.back()));
            if (nearest[i] > nearest[pick] || (nearest[i] == nearest[pick] && points[i] < points[pick])) pick = i;
        }
        centers.push_back(points[pick]);
    }
    // Center sums visit points in lexicographic order, so a permuted batch
    // produces bit-identical centers.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    std::vector<std::size_t> assign(n, 0);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        bool changed = it == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = dist2(points[i], centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = dist2(points[i], centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (best != assign[i]) changed = true;
            assign[i] = best;
        }
        if (!changed) break;
        std::vector<std::vector<double>> sums(k, std::vector<double>(points[0].size(), 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i : order) {
            ++counts[assign[i]];
            for (std::size_t j = 0; j < points[i].size(); ++j) sums[assign[i]][j] += points[i][j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty clusters keep their center
            for (auto& s : sums[c]) s /= static_cast<double>(counts[c]);
            centers[c] = std::move(sums[c]);
        }
    }
    return assign;
}

std::vector<double> cluster_reference(const std::vector<std::size_t>& assignment, std::span<const double> scores) {
    if (assignment.size() != scores.size()) throw DimensionError("cluster_reference: assignment and score lengths");
    const std::size_t k = assignment.empty() ? 0 : *std::max_element(assignment.begin(), assignment.end()) + 1;
    std::vector<double> total(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        total[assignment[i]] += scores[i];
        ++count[assignment[i]];
    }
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::size_t c = assignment[i];
        out[i] = count[c] == 1 ? scores[i] : (total[c] - scores[i]) / static_cast<double>(count[c] - 1);
    }
    return out;
}

ClusterReferencePath::ClusterReferencePath(std::size_t clusters, std::uint64_t seed)
    : clusters_(clusters), head_(Linear::create(seed, "static.head", 1, 1)) {
    if (clusters < 1) throw ConfigError("static_path.clusters must be at least 1");
}

Tensor ClusterReferencePath::forward(const EnhancedPair& pair, std::span<const double> scores) const {
    Tensor pooled;
    {
        ag::NoGradGuard guard;
        pooled = ag::concat({pool_rows(pair.text), pool_rows(pair.image)}, 1);
    }
    const std::size_t batch = pooled.dim(0), width = pooled.dim(1);
    if (scores.size() != batch) throw DimensionError("cluster reference: score count differs from batch size");
    std::vector<std::vector<double>> points(batch);
    for (std::size_t b = 0; b < batch; ++b) points[b].assign(pooled.values().begin() + b * width,
                                                            pooled.values().begin() + (b + 1) * width);
    return Tensor::from({batch, 1}, cluster_reference(kmeans(points, clusters_), scores));
}

Tensor ClusterReferencePath::score(const Tensor& z) const { return flatten_score(head_(z)); }

void ClusterReferencePath::collect_weights(std::vector<NamedTensor>& out) const { head_.collect(out); }

}  // namespace muse
