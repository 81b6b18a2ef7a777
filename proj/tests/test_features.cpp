#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "muse/errors.hpp"
#include "muse/features.hpp"

using namespace muse;
using muse::testing::random_tensor;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const ag::Tensor& t) {
    Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t[i * t.dim(1) + j];
    return m;
}

std::vector<double> column_mean(const Matrix& m) {
    std::vector<double> out(m[0].size(), 0.0);
    for (const auto& row : m)
        for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j];
    for (auto& x : out) x /= static_cast<double>(m.size());
    return out;
}

// Direct recomputation of the guidance formula with plain loops.
Matrix enhance_oracle(const Matrix& local, const std::vector<double>& other, const Linear& fc) {
    const std::size_t d = local[0].size();
    std::vector<double> g(d, 0.0);
    for (std::size_t o = 0; o < d; ++o) {
        for (std::size_t i = 0; i < other.size(); ++i) g[o] += other[i] * fc.weight[i * d + o];
        if (fc.bias.defined()) g[o] += fc.bias[o];
    }
    Matrix out = local;
    for (std::size_t r = 0; r < local.size(); ++r) {
        std::vector<double> drow(d);
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            drow[j] = local[r][j] * g[j];
            norm += drow[j] * drow[j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) {
            const double u = norm > 0 ? drow[j] / norm : 0.0;
            out[r][j] = (1.0 + u) * local[r][j];
        }
    }
    return out;
}

void expect_matrix_near(const ag::Tensor& t, const Matrix& m, double tol) {
    ASSERT_EQ(t.dim(0), m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) EXPECT_NEAR(t[i * t.dim(1) + j], m[i][j], tol);
}

FeatureMatrix random_features(Rng& rng, Modality m, std::size_t k, std::size_t d) {
    return FeatureMatrix::present(m, random_tensor(rng, {k, d}, 1.0, false));
}

}  // namespace

TEST(GlobalPool, ColumnMean) {
    auto f = FeatureMatrix::present(Modality::image, ag::Tensor::matrix({{1, 3}, {3, 5}}));
    auto g = global_pool(f);
    EXPECT_EQ(g[0], 2.0);
    EXPECT_EQ(g[1], 4.0);
    auto single = FeatureMatrix::present(Modality::text, ag::Tensor::matrix({{7, -1, 2}}));
    auto s = global_pool(single);
    EXPECT_EQ((std::vector<double>{s[0], s[1], s[2]}), (std::vector<double>{7, -1, 2}));
}

TEST(GlobalPool, MatchesSummationOracle) {
    Rng rng(11);
    auto f = random_features(rng, Modality::text, 8, 16);
    auto oracle = column_mean(to_matrix(f.values()));
    auto g = global_pool(f);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(g[j], oracle[j], 1e-15);
}

TEST(GlobalPool, AbsentIsContractError) {
    auto f = FeatureMatrix::absent(Modality::text, 2, 3);
    EXPECT_THROW(global_pool(f), ContractError);
}

TEST(Enhance, ZeroGuidanceLeavesLocal) {
    Rng rng(3);
    auto fc = Linear::create(1, "fc", 3, 4);  // zero bias at init
    auto local = random_tensor(rng, {5, 4}, 1.0, false);
    auto out = enhance(local, ag::Tensor::zeros({3}), fc);
    for (std::size_t i = 0; i < local.numel(); ++i) EXPECT_EQ(out[i], local[i]);
}

TEST(Enhance, RowGateHasUnitOrZeroNorm) {
    Rng rng(4);
    auto fc = Linear::create(2, "fc", 3, 4);
    std::vector<double> v(5 * 4);
    for (auto& x : v) x = rng.uniform(0.5, 1.5);
    for (std::size_t j = 0; j < 4; ++j) v[2 * 4 + j] = 0.0;  // zero row
    auto local = ag::Tensor::from({5, 4}, v);
    auto out = enhance(local, random_tensor(rng, {3}, 1.0, false), fc);
    for (std::size_t r = 0; r < 5; ++r) {
        double norm = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            if (local[r * 4 + j] == 0.0) {
                EXPECT_EQ(out[r * 4 + j], 0.0);
                continue;
            }
            const double u = out[r * 4 + j] / local[r * 4 + j] - 1.0;
            norm += u * u;
        }
        norm = std::sqrt(norm);
        EXPECT_TRUE(std::fabs(norm) < 1e-12 || std::fabs(norm - 1.0) < 1e-12) << "row " << r << " norm " << norm;
    }
}

TEST(Enhance, MatchesFormulaOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto fc = Linear::create(seed, "fc", 6, 5);
        for (auto& b : fc.bias.mutable_values()) b = rng.uniform(-1, 1);
        auto local = random_tensor(rng, {4, 5}, 1.0, false);
        auto other = random_tensor(rng, {6}, 1.0, false);
        auto expect = enhance_oracle(to_matrix(local), {other.values().begin(), other.values().end()}, fc);
        expect_matrix_near(enhance(local, other, fc), expect, 1e-12);
    }
}

TEST(Enhance, WidthMismatchThrows) {
    auto fc = Linear::create(1, "fc", 3, 5);
    EXPECT_THROW(enhance(ag::Tensor::zeros({2, 4}), ag::Tensor::zeros({3}), fc), DimensionError);
}

TEST(Enhance, BatchedMatchesPerSample) {
    Rng rng(9);
    auto fc = Linear::create(5, "fc", 3, 4);
    auto local = random_tensor(rng, {2, 5, 4}, 1.0, false);
    auto other = random_tensor(rng, {2, 3}, 1.0, false);
    auto out = enhance(local, other, fc);
    for (std::size_t b = 0; b < 2; ++b) {
        auto single = enhance(ag::select(local, 0, b), ag::select(other, 0, b), fc);
        for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(out[b * 20 + i], single[i]);
    }
}

TEST(PartialRule, TextAbsentGivesZeroAndRawImage) {
    Rng rng(1);
    auto fc = GuidanceLayers::create(1, 4, 3);
    auto text = FeatureMatrix::absent(Modality::text, 5, 4);
    auto image = random_features(rng, Modality::image, 2, 3);
    auto r = apply_partial_rule(text, image, fc);
    EXPECT_EQ(r.text.shape(), (ag::Shape{5, 4}));
    for (double x : r.text.values()) EXPECT_EQ(x, 0.0);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.image[i], image.values()[i]);
    EXPECT_EQ(text.absent_reads(), 0u);
}

TEST(PartialRule, ImageAbsentGivesRawTextAndZero) {
    Rng rng(2);
    auto fc = GuidanceLayers::create(1, 4, 3);
    auto text = random_features(rng, Modality::text, 5, 4);
    auto image = FeatureMatrix::absent(Modality::image, 2, 3);
    auto r = apply_partial_rule(text, image, fc);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(r.text[i], text.values()[i]);
    EXPECT_EQ(r.image.shape(), (ag::Shape{2, 3}));
    for (double x : r.image.values()) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(image.absent_reads(), 0u);
}

TEST(PartialRule, BothPresentEqualsEnhance) {
    Rng rng(3);
    auto fc = GuidanceLayers::create(7, 4, 3);
    auto text = random_features(rng, Modality::text, 5, 4);
    auto image = random_features(rng, Modality::image, 2, 3);
    auto r = apply_partial_rule(text, image, fc);
    auto wg = column_mean(to_matrix(text.values()));
    auto ig = column_mean(to_matrix(image.values()));
    expect_matrix_near(r.text, enhance_oracle(to_matrix(text.values()), ig, fc.text), 1e-12);
    expect_matrix_near(r.image, enhance_oracle(to_matrix(image.values()), wg, fc.image), 1e-12);
}

TEST(PartialRule, BothAbsentIsDataError) {
    auto fc = GuidanceLayers::create(1, 4, 3);
    EXPECT_THROW(apply_partial_rule(FeatureMatrix::absent(Modality::text, 2, 4),
                                    FeatureMatrix::absent(Modality::image, 2, 3), fc),
                 DataError);
}

TEST(PartialRule, AbsentPlaceholderReadIsCounted) {
    auto f = FeatureMatrix::absent(Modality::image, 2, 3);
    (void)f.values();
    EXPECT_EQ(f.absent_reads(), 1u);
}

TEST(PartialRule, BatchedMatchesPerSample) {
    Rng rng(5);
    auto fc = GuidanceLayers::create(3, 4, 3);
    ModalityBatch batch;
    batch.text = random_tensor(rng, {3, 5, 4}, 1.0, false);
    batch.image = random_tensor(rng, {3, 2, 3}, 1.0, false);
    batch.has_text = {true, false, true};
    batch.has_image = {true, true, false};
    batch.labels = {0, 1, 0};
    auto r = apply_partial_rule(batch, fc);
    for (std::size_t b = 0; b < 3; ++b) {
        auto t = batch.has_text[b] ? FeatureMatrix::present(Modality::text, ag::select(batch.text, 0, b))
                                   : FeatureMatrix::absent(Modality::text, 5, 4);
        auto v = batch.has_image[b] ? FeatureMatrix::present(Modality::image, ag::select(batch.image, 0, b))
                                    : FeatureMatrix::absent(Modality::image, 2, 3);
        auto single = apply_partial_rule(t, v, fc);
        for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(r.text[b * 20 + i], single.text[i], 1e-15);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.image[b * 6 + i], single.image[i], 1e-15);
    }
    batch.has_text[1] = false;
    batch.has_image[1] = false;
    EXPECT_THROW(apply_partial_rule(batch, fc), DataError);
}

TEST(PartialRule, ZeroBranchSumIsPassthrough) {
    Rng rng(6);
    auto fc = GuidanceLayers::create(3, 4, 4);
    auto text = FeatureMatrix::absent(Modality::text, 3, 4);
    auto image = random_features(rng, Modality::image, 3, 4);
    auto r = apply_partial_rule(text, image, fc);
    auto sum = ag::add(r.text, r.image);
    auto avg = ag::scale(sum, 0.5);
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(sum[i], image.values()[i]);
        EXPECT_EQ(avg[i], 0.5 * image.values()[i]);
    }
}
