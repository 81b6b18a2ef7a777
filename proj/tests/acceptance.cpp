// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion-number ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "muse/baseline.hpp"
#include "muse/cells.hpp"
#include "muse/errors.hpp"
#include "muse/features.hpp"
#include "muse/harness.hpp"
#include "muse/model.hpp"
#include "muse/paths.hpp"
#include "muse/searchspace.hpp"
#include "op_cases.hpp"

using namespace muse;
using muse::testing::gradcheck;
using muse::testing::project;
using muse::testing::random_tensor;

namespace {

using Vec = std::vector<double>;
using Clock = std::chrono::steady_clock;

// Collects failures inside one criterion; the first few are reported.
struct Checker {
    std::size_t checks = 0;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        ++checks;
        if (!ok) failures.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        const bool ok = std::fabs(got - want) <= tol;
        std::ostringstream s;
        if (!ok) s << what << ": got " << got << " want " << want;
        expect(ok, s.str());
    }
    bool ok() const { return failures.empty(); }
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec values(const ag::Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Four samples covering TV, T-bar V, T V-bar and TV.
ModalityBatch mixed_batch(const FeatureDims& d, std::uint64_t seed) {
    Rng rng(seed, "batch");
    ModalityBatch b;
    b.has_text = {true, false, true, true};
    b.has_image = {true, true, false, true};
    b.labels = {1, 0, 1, 0};
    const std::size_t tn = d.k_text * d.d_text, vn = d.k_image * d.d_image;
    Vec t(4 * tn, 0.0), v(4 * vn, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        if (b.has_text[i])
            for (std::size_t j = 0; j < tn; ++j) t[i * tn + j] = rng.normal();
        if (b.has_image[i])
            for (std::size_t j = 0; j < vn; ++j) v[i * vn + j] = rng.normal();
    }
    b.text = ag::Tensor::from({4, d.k_text, d.d_text}, std::move(t));
    b.image = ag::Tensor::from({4, d.k_image, d.d_image}, std::move(v));
    return b;
}

ModelConfig small_model(CombinerMode mode) {
    ModelConfig c;
    c.dims = {2, 3, 3, 2};
    c.hidden = 4;
    c.linear_depth = 2;
    c.sequence_depth = 2;
    c.combiner = mode;
    c.seed = 11;
    return c;
}

CellChainConfig chain_config(PathKind kind, std::size_t depth, Topology topo, std::uint64_t seed) {
    CellChainConfig c;
    c.kind = kind;
    c.hidden = 3;
    c.depth = depth;
    c.topology = topo;
    c.seed = seed;
    c.prefix = to_string(kind);
    return c;
}

void randomize_alpha(CellChain& chain, Rng& rng, double scale) {
    for (const auto& e : chain.edges())
        if (e.alpha.defined())
            for (auto& a : const_cast<Edge&>(e).alpha.mutable_values()) a = rng.uniform(-scale, scale);
}

ag::Shape chain_input(PathKind kind) { return kind == PathKind::linear ? ag::Shape{2, 3} : ag::Shape{2, 3, 3}; }

// ---------------------------------------------------------------------------

std::string gradient_suite(Checker& ck) {
    const auto start = Clock::now();
    std::size_t cases = 0;
    double worst = 0.0;
    auto record = [&](const std::string& name, const muse::testing::GradCheckResult& r, double tol) {
        ++cases;
        worst = std::max(worst, r.max_rel_error);
        ck.expect(r.max_rel_error < tol, name + ": " + r.worst);
    };
    const auto factories = muse::testing::op_case_factories();
    for (std::uint64_t seed = 100; seed < 104; ++seed) {
        for (const auto& [name, make] : factories) {
            Rng rng(seed, name);
            auto c = make(rng);
            record(name, gradcheck(c.f, c.inputs), 1e-4);
        }
    }
    for (auto kind : {OpKind::fusion, OpKind::seq_fusion, OpKind::linear_transform, OpKind::seq_transform}) {
        const bool seq = kind == OpKind::seq_fusion || kind == OpKind::seq_transform;
        for (const auto& name : operator_names(kind)) {
            for (std::uint64_t seed = 0; seed < 2; ++seed) {
                Rng rng(seed, name);
                auto op = make_operator(kind, name, 3, seed + 7, "p");
                ag::Shape s = seq ? ag::Shape{2, 1 + rng.below(3), 3} : ag::Shape{1 + rng.below(3), 3};
                std::vector<ag::Tensor> inputs;
                for (std::size_t i = 0; i < op->arity(); ++i) inputs.push_back(random_tensor(rng, s));
                for (auto& p : op->parameters()) inputs.push_back(p.tensor);
                const std::size_t arity = op->arity();
                auto f = [&](const std::vector<ag::Tensor>& in) {
                    return project(op->forward(std::span<const ag::Tensor>(in).first(arity)));
                };
                record(name, gradcheck(f, inputs), 1e-4);
            }
        }
    }
    const std::size_t op_cases = cases;
    for (auto mode : {CombinerMode::softmax_weights, CombinerMode::sigmoid}) {
        const Model model = Model::create(small_model(mode));
        const auto batch = mixed_batch(model.config().dims, 21);
        std::vector<ag::Tensor> inputs;
        std::set<std::string> names;
        for (const auto& p : model.all_parameters()) {
            inputs.push_back(p.tensor);
            names.insert(p.name);
        }
        for (const char* n : {"combiner.beta", "combiner.gamma", "combiner.delta", "linear.alpha(0,1)",
                              "linear.alpha(1,2)", "sequence.alpha(1,2)"})
            ck.expect(names.count(n) == 1, std::string("end-to-end inputs lack ") + n);
        record(std::string("end-to-end ") + to_string(mode),
               gradcheck([&](const std::vector<ag::Tensor>&) { return model.loss(batch); }, inputs), 1e-3);
    }
    const double secs = seconds_since(start);
    ck.expect(op_cases >= 100, "only " + std::to_string(op_cases) + " randomized cases");
    ck.expect(secs < 120.0, "runtime over 2 min");
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu operation cases + 2 end-to-end, worst rel err %.2e, %.1fs", op_cases, worst,
                  secs);
    return buf;
}

std::string mixed_op_suite(Checker& ck) {
    double worst_norm = 0.0, worst_sat = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, "mixed");
        for (auto kind : {PathKind::linear, PathKind::sequence}) {
            auto chain = CellChain::create(chain_config(kind, 3, Topology::dag, seed));
            randomize_alpha(chain, rng, seed % 2 ? 40.0 : 2.0);
            for (const auto& e : chain.edges()) {
                auto w = e.weights();
                const double total = std::accumulate(w.begin(), w.end(), 0.0);
                worst_norm = std::max(worst_norm, std::fabs(total - 1.0));
                ck.near(total, 1.0, 1e-12, "softmax normalization " + e.label());
                for (double x : w) ck.expect(x >= 0.0, "negative weight");
            }

            for (const auto& e : chain.edges()) {
                if (!e.alpha.defined()) continue;
                Vec a(e.ops.size(), 0.0);
                a[rng.below(a.size())] = 25.0;
                std::copy(a.begin(), a.end(), const_cast<Edge&>(e).alpha.mutable_values().begin());
                auto w = e.weights();
                ck.expect(*std::max_element(w.begin(), w.end()) > 1 - 1e-9, "saturation setup");
            }
            auto a = random_tensor(rng, chain_input(kind), 1.0, false);
            auto b = random_tensor(rng, chain_input(kind), 1.0, false);
            auto mixed = chain.forward(a, b);
            auto discrete = chain.discretize().forward(a, b);
            for (std::size_t i = 0; i < mixed.numel(); ++i) {
                worst_sat = std::max(worst_sat, std::fabs(mixed[i] - discrete[i]));
                ck.near(mixed[i], discrete[i], 1e-6, "saturated mixed vs discrete");
            }
        }
    }

    // Ties: equal logits always pick the first operator.
    ck.expect(argmax_index(Vec{0.5, 0.5, 0.5}) == 0, "argmax tie");
    ck.expect(argmax_index(Vec{-1.0, 2.0, 2.0}) == 1, "argmax partial tie");
    ck.expect(argmin_index(Vec{0.5, 0.5, 0.5}) == 2, "argmin tie");
    for (auto kind : {PathKind::linear, PathKind::sequence}) {
        auto chain = CellChain::create(chain_config(kind, 3, Topology::chain, 3));
        const auto first = chain.discretize().architecture();
        for (int rep = 0; rep < 3; ++rep)
            ck.expect(chain.discretize().architecture() == first, "tie-break not deterministic");
        for (std::size_t e = 0; e < first.size(); ++e)
            ck.expect(first[e][0] == chain.edges()[e].op_names()[0], "tie did not pick the first operator");
    }

    // Prune-to-one vs erasing the smallest logit from a plain list.
    std::size_t pruned_chains = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (auto kind : {PathKind::linear, PathKind::sequence}) {
            Rng rng(seed, "prune");
            auto chain = CellChain::create(chain_config(kind, 3, seed % 2 ? Topology::dag : Topology::chain, seed));
            randomize_alpha(chain, rng, 1.0);
            Architecture expect;
            for (const auto& e : chain.edges()) {
                auto names = e.op_names();
                if (!e.alpha.defined()) {
                    expect.push_back(names);
                    continue;
                }
                Vec a(e.alpha.values().begin(), e.alpha.values().end());
                if (e.fusion()) {
                    expect.push_back({names[std::max_element(a.begin(), a.end()) - a.begin()]});
                    continue;
                }
                while (names.size() > 1) {
                    auto it = std::min_element(a.begin(), a.end());
                    names.erase(names.begin() + (it - a.begin()));
                    a.erase(it);
                }
                expect.push_back(names);
            }
            const std::size_t start_ops = chain.edges().back().ops.size();
            std::size_t rounds = 0;
            while (chain.edges().back().ops.size() > 1) {
                chain = chain.prune_lowest();
                ++rounds;
            }
            ck.expect(rounds == start_ops - 1, "prune round count");
            bool threw = false;
            try {
                (void)chain.prune_lowest();
            } catch (const ContractError&) {
                threw = true;
            }
            ck.expect(threw, "pruning a single operator must fail");
            ck.expect(chain.discretize().architecture() == expect, "prune-to-one differs from removal oracle");
            ++pruned_chains;
        }
    }
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "max |sum w - 1| %.1e, max saturated gap %.1e, ties first-index, %zu chains pruned to one", worst_norm,
                  worst_sat, pruned_chains);
    return buf;
}

// ---------------------------------------------------------------------------

using Matrix = std::vector<Vec>;

Matrix to_matrix(const ag::Tensor& t) {
    Matrix m(t.dim(0), Vec(t.dim(1)));
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t[i * t.dim(1) + j];
    return m;
}

Vec column_mean(const Matrix& m) {
    Vec out(m[0].size(), 0.0);
    for (const auto& row : m)
        for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j];
    for (auto& x : out) x /= static_cast<double>(m.size());
    return out;
}

Vec linear_oracle(const Linear& fc, const Vec& x) {
    const std::size_t out = fc.weight.dim(1);
    Vec y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < x.size(); ++i) y[o] += x[i] * fc.weight[i * out + o];
        if (fc.bias.defined()) y[o] += fc.bias[o];
    }
    return y;
}

Matrix enhance_oracle(const Matrix& local, const Vec& other, const Linear& fc) {
    const auto g = linear_oracle(fc, other);
    Matrix out = local;
    for (std::size_t r = 0; r < local.size(); ++r) {
        Vec d(g.size());
        double norm = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            d[j] = local[r][j] * g[j];
            norm += d[j] * d[j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d.size(); ++j) out[r][j] = (1.0 + (norm > 0 ? d[j] / norm : 0.0)) * local[r][j];
    }
    return out;
}

void compare(Checker& ck, const ag::Tensor& t, const Matrix& m, const std::string& what, double& worst) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m[i].size(); ++j) {
            const double got = t[i * m[i].size() + j];
            worst = std::max(worst, std::fabs(got - m[i][j]));
            ck.near(got, m[i][j], 1e-12, what);
        }
    }
}

std::string equation_suite(Checker& ck) {
    double worst = 0.0;
    auto track = [&](double got, double want, const std::string& what) {
        worst = std::max(worst, std::fabs(got - want));
        ck.near(got, want, 1e-12, what);
    };
    std::set<std::string> covered;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, "oracle");
        const std::size_t kt = 2 + rng.below(3), dt = 2 + rng.below(4), kv = 2 + rng.below(3), dv = 2 + rng.below(4);

        // Guidance enhancement.
        auto fc = Linear::create(seed, "fc", dv, dt);
        for (auto& b : fc.bias.mutable_values()) b = rng.uniform(-1, 1);
        auto local = random_tensor(rng, {kt, dt}, 1.0, false);
        auto other = random_tensor(rng, {dv}, 1.0, false);
        compare(ck, enhance(local, other, fc), enhance_oracle(to_matrix(local), values(other), fc), "enhance", worst);
        covered.insert("enhance");

        // Missing-modality rule, all three presence patterns.
        auto guide = GuidanceLayers::create(seed, dt, dv);
        auto text = FeatureMatrix::present(Modality::text, random_tensor(rng, {kt, dt}, 1.0, false));
        auto image = FeatureMatrix::present(Modality::image, random_tensor(rng, {kv, dv}, 1.0, false));
        const auto tm = to_matrix(text.values()), vm = to_matrix(image.values());
        auto both = apply_partial_rule(text, image, guide);
        compare(ck, both.text, enhance_oracle(tm, column_mean(vm), guide.text), "partial rule text", worst);
        compare(ck, both.image, enhance_oracle(vm, column_mean(tm), guide.image), "partial rule image", worst);
        auto no_text = apply_partial_rule(FeatureMatrix::absent(Modality::text, kt, dt), image, guide);
        compare(ck, no_text.text, Matrix(kt, Vec(dt, 0.0)), "partial rule absent text", worst);
        compare(ck, no_text.image, vm, "partial rule passthrough image", worst);
        auto no_image = apply_partial_rule(text, FeatureMatrix::absent(Modality::image, kv, dv), guide);
        compare(ck, no_image.text, tm, "partial rule passthrough text", worst);
        compare(ck, no_image.image, Matrix(kv, Vec(dv, 0.0)), "partial rule absent image", worst);
        covered.insert("partial rule");

        // Sum fusion and sequence Concat fusion.
        auto sum_op = make_operator(OpKind::fusion, "Sum", 4, seed, "f");
        auto a = random_tensor(rng, {3, 4}, 1.0, false), b = random_tensor(rng, {3, 4}, 1.0, false);
        auto s = (*sum_op)(a, b);
        for (std::size_t i = 0; i < 12; ++i) track(s[i], a[i] + b[i], "Sum fusion");
        covered.insert("Sum fusion");
        auto cat = make_operator(OpKind::seq_fusion, "Concat", 3, seed, "f");
        const std::size_t la = 1 + rng.below(3), lb = 1 + rng.below(3);
        auto sa = random_tensor(rng, {2, la, 3}, 1.0, false), sb = random_tensor(rng, {2, lb, 3}, 1.0, false);
        auto fused = (*cat)(sa, sb);
        ck.expect(fused.shape() == ag::Shape{2, la + lb, 3}, "Concat shape");
        for (std::size_t bi = 0; bi < 2; ++bi)
            for (std::size_t r = 0; r < la + lb; ++r)
                for (std::size_t j = 0; j < 3; ++j) {
                    const double want = r < la ? sa[(bi * la + r) * 3 + j] : sb[(bi * lb + r - la) * 3 + j];
                    track(fused[(bi * (la + lb) + r) * 3 + j], want, "Concat sequence fusion");
                }
        covered.insert("Concat fusion");

        // Score combination in both modes.
        auto y1 = random_tensor(rng, {5}, 3), y2 = random_tensor(rng, {5}, 3), y3 = random_tensor(rng, {5}, 3);
        const double be = rng.uniform(-2, 2), ga = rng.uniform(-2, 2), de = rng.uniform(-2, 2);
        const auto B = ag::Tensor::scalar(be), G = ag::Tensor::scalar(ga), D = ag::Tensor::scalar(de);
        auto ys = combine(y1, y2, y3, B, G, D, CombinerMode::sigmoid);
        auto yw = combine(y1, y2, y3, B, G, D, CombinerMode::softmax_weights);
        const double z = std::exp(be) + std::exp(ga) + std::exp(de);
        for (std::size_t i = 0; i < 5; ++i) {
            track(ys[i], sig(be * sig(y1[i]) + ga * sig(y2[i]) + de * sig(y3[i])), "combine sigmoid");
            track(yw[i], (std::exp(be) * sig(y1[i]) + std::exp(ga) * sig(y2[i]) + std::exp(de) * sig(y3[i])) / z,
                  "combine softmax");
        }
        covered.insert("combine");

        // Binary cross-entropy.
        const std::size_t n = 1 + rng.below(30);
        Vec p(n), y(n);
        double want = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform(0.01, 0.99);
            y[i] = static_cast<double>(rng.below(2));
            want -= y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
        }
        track(ag::bce(ag::Tensor::from({n}, p), y).item(), want / static_cast<double>(n), "bce");
        covered.insert("bce");

        // Cell DAG forward as explicit weighted sums over incoming edges.
        auto chain = CellChain::create(chain_config(PathKind::linear, 4, Topology::dag, seed));
        randomize_alpha(chain, rng, 2.0);
        auto ca = random_tensor(rng, {2, 3}, 1.0, false), cb = random_tensor(rng, {2, 3}, 1.0, false);
        std::vector<Vec> node(5);
        for (std::size_t j = 1; j <= 4; ++j) {
            Vec acc(6, 0.0);
            for (const auto& e : chain.edges()) {
                if (e.to != j || !e.enabled) continue;
                std::vector<ag::Tensor> in;
                if (e.from == 0) {
                    in = {ca, cb};
                } else {
                    in = {ag::Tensor::from({2, 3}, node[e.from])};
                }
                const auto w = e.weights();
                for (std::size_t o = 0; o < e.ops.size(); ++o) {
                    auto out = e.ops[o]->forward(in);
                    for (std::size_t i = 0; i < 6; ++i) acc[i] += w[o] * out[i];
                }
            }
            node[j] = acc;
        }
        auto dag = chain.forward(ca, cb);
        for (std::size_t i = 0; i < 6; ++i) track(dag[i], node[4][i], "DAG forward");
        covered.insert("DAG forward");

        // Cluster reference: leave-one-out cluster mean of the scores.
        const std::size_t batch = 5 + rng.below(6), k = 2 + rng.below(2);
        ClusterReferencePath cluster(k, seed);
        EnhancedPair pair{random_tensor(rng, {batch, kt, dt}, 1.0, false),
                          random_tensor(rng, {batch, kv, dv}, 1.0, false)};
        Vec scores(batch);
        for (auto& x : scores) x = rng.uniform(-2, 2);
        auto z3 = cluster.forward(pair, scores);
        std::vector<Vec> pts;
        for (std::size_t i = 0; i < batch; ++i) {
            auto t = column_mean(to_matrix(ag::select(pair.text, 0, i)));
            auto v = column_mean(to_matrix(ag::select(pair.image, 0, i)));
            t.insert(t.end(), v.begin(), v.end());
            pts.push_back(t);
        }
        const auto assign = kmeans(pts, k);
        for (std::size_t i = 0; i < batch; ++i) {
            double total = 0.0;
            int count = 0;
            for (std::size_t o = 0; o < batch; ++o) {
                if (o == i || assign[o] != assign[i]) continue;
                total += scores[o];
                ++count;
            }
            track(z3[i], count ? total / count : scores[i], "cluster reference");
        }
        covered.insert("cluster reference");

        // Metrics against a direct tally.
        const std::size_t m = 20 + rng.below(100);
        Vec probs(m);
        std::vector<int> labels(m);
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < m; ++i) {
            probs[i] = rng.below(10) == 0 ? 0.5 : rng.uniform();
            labels[i] = static_cast<int>(rng.below(2));
            const bool pred = probs[i] >= 0.5;
            tp += pred && labels[i] == 1;
            fp += pred && labels[i] == 0;
            fn += !pred && labels[i] == 1;
            tn += !pred && labels[i] == 0;
        }
        auto met = compute_metrics(probs, labels);
        auto f1 = [](double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; };
        auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / b : 0.0; };
        track(met.accuracy, ratio(tp + tn, m), "accuracy");
        const double pf = ratio(tp, tp + fp), rf = ratio(tp, tp + fn), pr = ratio(tn, tn + fn), rr = ratio(tn, tn + fp);
        track(met.fake.precision, pf, "fake precision");
        track(met.fake.recall, rf, "fake recall");
        track(met.fake.f1, f1(pf, rf), "fake f1");
        track(met.real.precision, pr, "real precision");
        track(met.real.recall, rr, "real recall");
        track(met.real.f1, f1(pr, rr), "real f1");
        ck.expect(met.fake.tp == tp && met.fake.fp == fp && met.fake.fn == fn && met.fake.tn == tn, "confusion");
        covered.insert("metrics");
    }
    std::string list;
    for (const auto& c : covered) list += (list.empty() ? "" : ", ") + c;
    char buf[80];
    std::snprintf(buf, sizeof buf, " | max abs err %.1e", worst);
    return list + buf;
}

// ---------------------------------------------------------------------------

Dataset presence_dataset(const FeatureDims& d, std::uint64_t seed, bool text, bool image, std::size_t n) {
    Rng rng(seed, "presence");
    Dataset ds;
    ds.dims = d;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.id = std::to_string(i);
        s.label = static_cast<int>(i % 2);
        s.text = text ? FeatureMatrix::present(Modality::text, random_tensor(rng, {d.k_text, d.d_text}, 1.0, false))
                      : FeatureMatrix::absent(Modality::text, d.k_text, d.d_text);
        s.image = image
                      ? FeatureMatrix::present(Modality::image, random_tensor(rng, {d.k_image, d.d_image}, 1.0, false))
                      : FeatureMatrix::absent(Modality::image, d.k_image, d.d_image);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::size_t absent_reads(const Dataset& ds) {
    std::size_t reads = 0;
    for (const auto& s : ds.samples) {
        if (!s.text.is_present()) reads += s.text.absent_reads();
        if (!s.image.is_present()) reads += s.image.absent_reads();
    }
    return reads;
}

std::string partial_contract(Checker& ck) {
    std::size_t forwards = 0;
    const std::pair<bool, bool> patterns[] = {{true, true}, {false, true}, {true, false}};
    for (auto variant : {StaticVariant::siamese, StaticVariant::cluster_reference}) {
        for (auto mode : {CombinerMode::softmax_weights, CombinerMode::sigmoid}) {
            auto cfg = small_model(mode);
            cfg.static_variant = variant;
            const Model model = Model::create(cfg);
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                for (auto [t, v] : patterns) {
                    auto ds = presence_dataset(cfg.dims, seed, t, v, 6);
                    auto p = model.forward(make_batch(ds));
                    for (const auto* x : {&p.y, &p.y1, &p.y2, &p.y3, &p.z1, &p.z2, &p.z3})
                        for (double e : x->values()) ck.expect(std::isfinite(e), "non-finite forward value");
                    auto loss = model.loss(make_batch(ds));
                    ag::backward(loss);
                    for (const auto& w : model.all_parameters()) {
                        if (!w.tensor.has_grad()) continue;
                        for (double g : w.tensor.grad()) ck.expect(std::isfinite(g), "non-finite gradient");
                    }
                    for (auto& w : model.all_parameters()) w.tensor.zero_grad();
                    ck.expect(absent_reads(ds) == 0, "absent modality placeholder was read");
                    ++forwards;
                }
                // One mixed batch with every pattern at once.
                auto ds = presence_dataset(cfg.dims, seed, true, true, 6);
                ds.samples[1].text = FeatureMatrix::absent(Modality::text, cfg.dims.k_text, cfg.dims.d_text);
                ds.samples[2].image = FeatureMatrix::absent(Modality::image, cfg.dims.k_image, cfg.dims.d_image);
                ds.samples[4].text = FeatureMatrix::absent(Modality::text, cfg.dims.k_text, cfg.dims.d_text);
                auto p = model.forward(make_batch(ds));
                for (double e : p.y.values()) ck.expect(std::isfinite(e) && e > 0 && e < 1, "mixed batch output");
                ck.expect(absent_reads(ds) == 0, "absent modality placeholder was read (mixed batch)");
                ++forwards;
            }
        }
    }

    // Zero/passthrough rule, exact equality, single sample and batched.
    std::size_t exact = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, "rule");
        auto guide = GuidanceLayers::create(seed, 4, 3);
        auto text = FeatureMatrix::present(Modality::text, random_tensor(rng, {3, 4}, 1.0, false));
        auto image = FeatureMatrix::present(Modality::image, random_tensor(rng, {2, 3}, 1.0, false));
        auto no_text = FeatureMatrix::absent(Modality::text, 3, 4);
        auto no_image = FeatureMatrix::absent(Modality::image, 2, 3);
        auto r1 = apply_partial_rule(no_text, image, guide);
        ck.expect(values(r1.image) == values(image.values()), "present image not passed through exactly");
        ck.expect(values(r1.text) == Vec(12, 0.0), "absent text not exactly zero");
        auto r2 = apply_partial_rule(text, no_image, guide);
        ck.expect(values(r2.text) == values(text.values()), "present text not passed through exactly");
        ck.expect(values(r2.image) == Vec(6, 0.0), "absent image not exactly zero");
        ck.expect(no_text.absent_reads() == 0 && no_image.absent_reads() == 0, "placeholder read by partial rule");

        FeatureDims d{3, 4, 2, 3};
        auto ds = presence_dataset(d, seed, true, true, 3);
        ds.samples[0].text = FeatureMatrix::absent(Modality::text, 3, 4);
        ds.samples[2].image = FeatureMatrix::absent(Modality::image, 2, 3);
        auto rb = apply_partial_rule(make_batch(ds), guide);
        for (std::size_t i = 0; i < 12; ++i) ck.expect(rb.text[i] == 0.0, "batched absent text not zero");
        for (std::size_t i = 0; i < 6; ++i)
            ck.expect(rb.image[i] == ds.samples[0].image.values()[i], "batched image passthrough");
        for (std::size_t i = 0; i < 12; ++i)
            ck.expect(rb.text[24 + i] == ds.samples[2].text.values()[i], "batched text passthrough");
        for (std::size_t i = 0; i < 6; ++i) ck.expect(rb.image[12 + i] == 0.0, "batched absent image not zero");
        ck.expect(absent_reads(ds) == 0, "batched rule read a placeholder");
        exact += 2;
    }
    return std::to_string(forwards) + " forward passes over TV / T-bar V / T V-bar finite, 0 placeholder reads, " +
           std::to_string(exact) + " exact zero/passthrough cases";
}

// ---------------------------------------------------------------------------

RunConfig default_run(std::uint64_t seed) {
    RunConfig c;
    c.seed = seed;
    c.data.n = 1000;
    c.data.noise = 0.1;
    c.data.rule = PlantedRule::sum;
    c.model.hidden = 8;
    return c;
}

std::string planted_search(Checker& ck) {
    const auto start = Clock::now();
    std::size_t accurate = 0, mass_above = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RunConfig c = default_run(seed);
        auto data = prepare_data(c);
        auto searched = run_search(c, data.split);
        const auto& fusion = searched.model.chain(PathKind::linear)->edges()[0];
        const auto names = fusion.op_names();
        const auto w = fusion.weights();
        const auto it = std::find(names.begin(), names.end(), planted_fusion_operator(c.data.rule));
        const double mass = it == names.end() ? 0.0 : w[it - names.begin()];
        const double uniform = 1.0 / static_cast<double>(names.size());
        auto retrained = retrain_discrete(searched.model, data.split.train, data.split.valid, c.train, c.seed);
        const double acc = evaluate(retrained.model, data.split.test, c.eval_batch_size).accuracy;
        accurate += acc >= 0.95;
        mass_above += mass > uniform;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%sseed %llu acc %.3f mass %.3f", detail.empty() ? "" : "; ",
                      static_cast<unsigned long long>(seed), acc, mass);
        detail += buf;
    }
    const double secs = seconds_since(start);
    ck.expect(accurate >= 4, "accuracy >= 0.95 in only " + std::to_string(accurate) + "/5 seeds");
    ck.expect(mass_above >= 3, "fusion mass above uniform in only " + std::to_string(mass_above) + "/5 seeds");
    ck.expect(secs < 600.0, "runtime over 10 min");
    char buf[96];
    std::snprintf(buf, sizeof buf, " | >=95%%: %zu/5, mass > uniform: %zu/5, %.0fs", accurate, mass_above, secs);
    return detail + buf;
}

std::string partial_robustness(Checker& ck) {
    std::size_t wins = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RunConfig c = default_run(seed);
        c.partial = true;
        c.baseline = true;
        auto report = run_experiment(c);
        double muse = -1, base = -1;
        for (const auto& row : report.rows) {
            if (row.label == "MUSE-discrete") muse = row.metrics.accuracy;
            if (row.label == "Concat Baseline") base = row.metrics.accuracy;
        }
        ck.expect(muse >= 0 && base >= 0, "report rows missing");
        wins += muse > base;
        char buf[80];
        std::snprintf(buf, sizeof buf, "%sseed %llu MUSE %.3f baseline %.3f", detail.empty() ? "" : "; ",
                      static_cast<unsigned long long>(seed), muse, base);
        detail += buf;
    }
    ck.expect(wins >= 4, "MUSE ahead in only " + std::to_string(wins) + "/5 seeds");
    return detail + " | MUSE ahead in " + std::to_string(wins) + "/5";
}

// ---------------------------------------------------------------------------

RunConfig smoke_run() {
    RunConfig c;
    c.seed = 3;
    c.data.n = 200;
    c.data.dims = {3, 4, 3, 4};
    c.model.hidden = 4;
    c.train.search_epochs = 2;
    c.train.retrain_epochs = 2;
    return c;
}

std::string ablation_shape(Checker& ck) {
    RunConfig c = smoke_run();
    auto data = prepare_data(c);
    auto searched = run_search(c, data.split);
    std::string detail;
    for (auto [kind, rows] : {std::pair{PathKind::linear, std::size_t{7}}, std::pair{PathKind::sequence, std::size_t{5}}}) {
        RunConfig v = c;
        v.ablation_path = kind;
        auto r = run_operator_ablation(v, searched.model, data.split);
        ck.expect(r.rows.size() == rows, std::string(to_string(kind)) + " rows: " + std::to_string(r.rows.size()));
        for (std::size_t i = 0; i < r.rows.size(); ++i)
            ck.expect(r.rows[i].label == operator_count_label(rows - i, rows), "row label " + r.rows[i].label);
        detail += std::string(to_string(kind)) + " " + std::to_string(r.rows.size()) + " rows, ";
    }
    auto paths = run_path_ablation(c, data.split);
    const std::vector<std::string> want = {"w/o Linear", "w/o Sequence", "w/o Auxiliary", "MUSE"};
    std::vector<std::string> got;
    for (const auto& row : paths.rows) got.push_back(row.label);
    ck.expect(got == want, "path ablation rows");
    detail += "path " + std::to_string(got.size()) + " rows, ";

    // The w/o-Auxiliary model against the full model with the static path
    // knocked out, on real batches, in both combiner modes.
    std::size_t compared = 0;
    for (auto mode : {CombinerMode::softmax_weights, CombinerMode::sigmoid}) {
        for (auto variant : {StaticVariant::siamese, StaticVariant::cluster_reference}) {
            RunConfig v = c;
            v.model.combiner = mode;
            v.model.static_variant = variant;
            Model full = Model::create(model_config(v));
            full.knock_out_static();
            v.model.paths = {true, true, false};
            const Model reduced = Model::create(model_config(v));
            auto order = std::vector<std::size_t>(data.split.test.size());
            std::iota(order.begin(), order.end(), 0);
            for (const auto& b : make_batches(order, 16, 4)) {
                auto batch = make_batch(data.split.test, b);
                ck.expect(values(full.forward(batch).y) == values(reduced.forward(batch).y),
                          std::string("knockout differs in ") + to_string(mode) + " mode");
                ++compared;
            }
        }
    }
    return detail + "w/o Auxiliary == knockout on " + std::to_string(compared) + " batches";
}

// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

std::string determinism(Checker& ck) {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "muse_acceptance_replay";
    fs::remove_all(root);
    const std::string cli = MUSE_CLI_PATH;
    const std::string config =
        "seed = 5\ndata.n = 200\ndata.k_text = 3\ndata.d_text = 4\ndata.k_image = 3\ndata.d_image = 4\n"
        "model.hidden = 4\ntrain.search_epochs = 2\ntrain.retrain_epochs = 2\neval.baseline = true\n";
    const std::vector<std::string> steps = {
        "synth -c cfg -o data.musef",
        "corrupt -c cfg -i data.musef -o partial.musef",
        "search -c cfg -d data.musef -o searched.json",
        "discretize -i searched.json -o discrete.json",
        "retrain -c cfg -d data.musef -i searched.json -o retrained.json",
        "eval -c cfg -d data.musef -m retrained.json --csv eval.csv --table eval.txt",
        "ablate-operators -c cfg -d data.musef -m searched.json --csv ops.csv --table ops.txt",
        "ablate-paths -c cfg -d data.musef --csv paths.csv --table paths.txt",
        "report -c cfg -d partial.musef --csv report.csv --table report.txt",
    };
    const std::vector<std::string> outputs = {"data.musef",     "partial.musef", "searched.json", "discrete.json",
                                              "retrained.json", "eval.csv",      "eval.txt",      "ops.csv",
                                              "ops.txt",        "paths.csv",     "paths.txt",     "report.csv",
                                              "report.txt",     "stdout.txt"};
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        fs::create_directories(dir);
        std::ofstream(dir / "cfg") << config;
        for (const auto& step : steps) {
            const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + step + " >> stdout.txt 2>> stderr.txt";
            const int rc = std::system(cmd.c_str());
            ck.expect(rc == 0, std::string("run ") + run + ": '" + step + "' exited with " + std::to_string(rc));
        }
    }
    std::size_t identical = 0;
    for (const auto& name : outputs) {
        const auto a = read_file(root / "a" / name), b = read_file(root / "b" / name);
        ck.expect(!a.empty(), name + " is empty");
        ck.expect(a == b, name + " differs between replays");
        identical += !a.empty() && a == b;
    }
    if (ck.ok()) fs::remove_all(root);
    return std::to_string(steps.size()) + " CLI steps replayed, " + std::to_string(identical) + "/" +
           std::to_string(outputs.size()) + " outputs byte-identical";
}

struct Criterion {
    const char* name;
    std::function<std::string(Checker&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {"gradient suite", gradient_suite},
        {"mixed-op and discretization", mixed_op_suite},
        {"equation oracles", equation_suite},
        {"partial-modality contract", partial_contract},
        {"planted search", planted_search},
        {"partial robustness vs concat baseline", partial_robustness},
        {"ablation shape", ablation_shape},
        {"determinism", determinism},
    };
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) only.insert(std::strtoul(argv[i], nullptr, 10));

    std::size_t failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        Checker ck;
        std::string detail;
        try {
            detail = criteria[i].run(ck);
        } catch (const std::exception& e) {
            ck.failures.push_back(std::string("exception: ") + e.what());
        }
        std::printf("%s [%zu] %s: %s\n", ck.ok() ? "PASS" : "FAIL", i + 1, criteria[i].name, detail.c_str());
        for (std::size_t f = 0; f < std::min<std::size_t>(ck.failures.size(), 5); ++f)
            std::printf("    %s\n", ck.failures[f].c_str());
        if (ck.failures.size() > 5) std::printf("    ... %zu more\n", ck.failures.size() - 5);
        std::fflush(stdout);
        failed += !ck.ok();
    }
    std::printf("%zu failed\n", failed);
    return failed == 0 ? 0 : 1;
}
