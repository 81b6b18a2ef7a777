#include "muse/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "muse/errors.hpp"
#include "muse/rng.hpp"

namespace muse {

using ag::Tensor;

const char* to_string(CombinerMode mode) { return mode == CombinerMode::sigmoid ? "sigmoid" : "softmax_weights"; }

CombinerMode parse_combiner_mode(const std::string& text) {
    if (text == "sigmoid") return CombinerMode::sigmoid;
    if (text == "softmax_weights") return CombinerMode::softmax_weights;
    throw ConfigError("combiner.mode must be sigmoid or softmax_weights, got '" + text + "'");
}

PathSet parse_path_set(const std::string& text) {
    if (text == "all") return {};
    PathSet p{false, false, false};
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "linear") {
            p.linear = true;
        } else if (item == "sequence") {
            p.sequence = true;
        } else if (item == "static" || item == "auxiliary") {
            p.aux = true;
        } else {
            throw ConfigError("unknown path '" + item + "' (expected linear, sequence, static or all)");
        }
    }
    if (p.count() == 0) throw ConfigError("at least one path must be enabled");
    return p;
}

std::string to_string(const PathSet& p) {
    if (p.count() == 3) return "all";
    std::string s;
    auto add = [&s](const char* name) { s += (s.empty() ? "" : ",") + std::string(name); };
    if (p.linear) add("linear");
    if (p.sequence) add("sequence");
    if (p.aux) add("static");
    return s;
}

Tensor scale_score(const Tensor& score) { return ag::sigmoid(score); }

Tensor combine(const Tensor& y1, const Tensor& y2, const Tensor& y3, const Tensor& beta, const Tensor& gamma,
               const Tensor& delta, CombinerMode mode) {
    const Tensor* scores[3] = {&y1, &y2, &y3};
    const Tensor* weights[3] = {&beta, &gamma, &delta};
    if (mode == CombinerMode::sigmoid) {
        Tensor acc;
        for (int i = 0; i < 3; ++i) {
            if (!scores[i]->defined()) continue;
            Tensor term = ag::mul_scalar(scale_score(*scores[i]), *weights[i]);
            acc = acc.defined() ? ag::add(acc, term) : term;
        }
        if (!acc.defined()) throw ConfigError("combine: no path scores");
        return ag::sigmoid(acc);
    }
    std::vector<Tensor> logits, terms;
    for (int i = 0; i < 3; ++i) {
        if (!scores[i]->defined()) continue;
        logits.push_back(*weights[i]);
        terms.push_back(scale_score(*scores[i]));
    }
    if (terms.empty()) throw ConfigError("combine: no path scores");
    return ag::weighted_sum(ag::softmax(ag::concat(logits, 0), 0), terms);
}

// ---------------------------------------------------------------------------

namespace {

CellChainConfig chain_config(const ModelConfig& c, PathKind kind) {
    CellChainConfig cc;
    cc.kind = kind;
    cc.hidden = c.hidden;
    cc.topology = c.topology;
    cc.seed = c.seed;
    cc.prefix = to_string(kind);
    if (kind == PathKind::linear) {
        cc.depth = c.linear_depth;
        cc.fusion_ops = c.linear_fusion_ops;
        cc.transform_ops = c.linear_transform_ops;
    } else {
        cc.depth = c.sequence_depth;
        cc.transform_ops = c.sequence_transform_ops;
    }
    return cc;
}

void validate(const ModelConfig& c) {
    if (c.hidden < 1) throw ConfigError("model.hidden must be at least 1");
    if (c.linear_depth < 1 || c.sequence_depth < 1) throw ConfigError("cell depths must be at least 1");
    if (c.paths.count() == 0) throw ConfigError("at least one path must be enabled");
    if (c.clusters < 1) throw ConfigError("static_path.clusters must be at least 1");
    if (c.paths.aux && c.static_variant == StaticVariant::cluster_reference && !c.paths.linear && !c.paths.sequence) {
        throw ConfigError("the cluster_reference static path needs a dynamic path to reference");
    }
}

}  // namespace

Model Model::create(const ModelConfig& config) {
    ModelArchitecture arch;
    if (config.paths.linear) arch.linear = CellChain::create(chain_config(config, PathKind::linear)).architecture();
    if (config.paths.sequence) {
        arch.sequence = CellChain::create(chain_config(config, PathKind::sequence)).architecture();
    }
    return create(config, arch, false);
}

Model Model::create(const ModelConfig& config, const ModelArchitecture& arch, bool discrete) {
    validate(config);
    Model m;
    m.config_ = config;
    m.discrete_ = discrete;
    m.guide_ = GuidanceLayers::create(config.seed, config.dims.d_text, config.dims.d_image);
    if (config.paths.linear) {
        m.linear_.emplace(config.dims, CellChain::create(chain_config(config, PathKind::linear), arch.linear, discrete),
                          config.seed);
    }
    if (config.paths.sequence) {
        m.sequence_.emplace(config.dims,
                            CellChain::create(chain_config(config, PathKind::sequence), arch.sequence, discrete),
                            config.seed);
    }
    if (config.paths.aux) {
        if (config.static_variant == StaticVariant::siamese) {
            m.siamese_.emplace(config.dims, config.hidden, config.seed);
        } else {
            m.cluster_.emplace(config.clusters, config.seed);
        }
    }
    m.beta_ = Tensor::scalar(1.0, true);
    m.gamma_ = Tensor::scalar(1.0, true);
    m.delta_ = Tensor::scalar(1.0, true);
    return m;
}

Prediction Model::forward(const ModalityBatch& batch) const {
    if (batch.size() == 0) throw DataError("empty batch");
    EnhancedPair pair = apply_partial_rule(batch, guide_);
    Prediction p;
    if (linear_) {
        p.z1 = linear_->forward(pair);
        p.y1 = linear_->score(p.z1);
    }
    if (sequence_) {
        p.z2 = sequence_->forward(pair);
        p.y2 = sequence_->score(p.z2);
    }
    if (siamese_) {
        p.z3 = siamese_->forward(pair, batch.has_text, batch.has_image);
        p.y3 = siamese_->score(p.z3);
    } else if (cluster_) {
        std::vector<double> ref(batch.size(), 0.0);
        int used = 0;
        for (const Tensor* y : {&p.y1, &p.y2}) {
            if (!y->defined()) continue;
            ++used;
            for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += (*y)[i];
        }
        for (auto& r : ref) r /= used;
        p.z3 = cluster_->forward(pair, ref);
        p.y3 = cluster_->score(p.z3);
    }
    p.y = combine(p.y1, p.y2, p.y3, beta_, gamma_, delta_frozen_ ? delta_.detach() : delta_, config_.combiner);
    return p;
}

Tensor Model::loss(const ModalityBatch& batch) const { return ag::bce(forward(batch).y, batch.labels); }

std::vector<NamedTensor> Model::weights() const {
    std::vector<NamedTensor> out;
    guide_.collect(out);
    if (linear_) linear_->collect_weights(out);
    if (sequence_) sequence_->collect_weights(out);
    if (siamese_) siamese_->collect_weights(out);
    if (cluster_) cluster_->collect_weights(out);
    if (linear_) out.push_back({"combiner.beta", beta_});
    if (sequence_) out.push_back({"combiner.gamma", gamma_});
    if ((siamese_ || cluster_) && !delta_frozen_) out.push_back({"combiner.delta", delta_});
    return out;
}

std::vector<NamedTensor> Model::arch() const {
    std::vector<NamedTensor> out;
    if (linear_) linear_->chain().collect_arch(out);
    if (sequence_) sequence_->chain().collect_arch(out);
    return out;
}

std::vector<NamedTensor> Model::all_parameters() const {
    auto out = weights();
    if (delta_frozen_ && (siamese_ || cluster_)) out.push_back({"combiner.delta", delta_});
    for (auto& a : arch()) out.push_back(std::move(a));
    return out;
}

ModelArchitecture Model::architecture() const {
    ModelArchitecture a;
    if (linear_) a.linear = linear_->chain().architecture();
    if (sequence_) a.sequence = sequence_->chain().architecture();
    return a;
}

std::string Model::genotype() const {
    std::string s;
    if (linear_) s += "linear:\n" + linear_->chain().genotype();
    if (sequence_) s += "sequence:\n" + sequence_->chain().genotype();
    return s;
}

const CellChain* Model::chain(PathKind kind) const {
    if (kind == PathKind::linear) return linear_ ? &linear_->chain() : nullptr;
    return sequence_ ? &sequence_->chain() : nullptr;
}

CellChain* Model::chain(PathKind kind) {
    if (kind == PathKind::linear) return linear_ ? &linear_->chain() : nullptr;
    return sequence_ ? &sequence_->chain() : nullptr;
}

void Model::set_delta(double value) { delta_.mutable_values()[0] = value; }

void Model::knock_out_static() {
    set_delta(config_.combiner == CombinerMode::sigmoid ? 0.0 : -std::numeric_limits<double>::infinity());
    freeze_delta(true);
}

namespace {

// `skip_prefix` leaves out parameters whose shapes legitimately changed.
void copy_state(const Model& from, Model& to, const std::string& skip_prefix = "") {
    auto params = from.all_parameters();
    if (!skip_prefix.empty()) {
        std::erase_if(params, [&](const NamedTensor& p) { return p.name.rfind(skip_prefix, 0) == 0; });
    }
    copy_parameters(params, to.all_parameters());
    to.freeze_delta(from.delta_frozen());
    for (auto kind : {PathKind::linear, PathKind::sequence}) {
        const CellChain* a = from.chain(kind);
        CellChain* b = to.chain(kind);
        if (!a || !b) continue;
        for (const auto& e : a->edges()) b->edge(e.from, e.to).enabled = e.enabled;
    }
}

}  // namespace

Model Model::clone() const {
    Model m = create(config_, architecture(), discrete_);
    copy_state(*this, m);
    return m;
}

Model Model::discretize() const {
    ModelArchitecture a;
    if (linear_) a.linear = linear_->chain().discretize().architecture();
    if (sequence_) a.sequence = sequence_->chain().discretize().architecture();
    Model m = create(config_, a, true);
    copy_state(*this, m);
    return m;
}

Model Model::prune_lowest(PathKind kind) const {
    const CellChain* c = chain(kind);
    if (!c) throw ConfigError(std::string("cannot prune the disabled ") + to_string(kind) + " path");
    CellChain pruned = c->prune_lowest();
    ModelArchitecture a = architecture();
    (kind == PathKind::linear ? a.linear : a.sequence) = pruned.architecture();
    Model m = create(config_, a, discrete_);
    copy_state(*this, m, std::string(to_string(kind)) + ".alpha");
    // Surviving logits moved position; take them from the pruned chain.
    std::vector<NamedTensor> from, to;
    pruned.collect_arch(from);
    m.chain(kind)->collect_arch(to);
    copy_parameters(from, to);
    return m;
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t size,
                                                   std::size_t min_size) {
    if (size == 0) throw ConfigError("train.batch_size must be positive");
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += size) {
        const std::size_t end = std::min(order.size(), i + size);
        batches.emplace_back(order.begin() + i, order.begin() + end);
    }
    if (batches.size() > 1 && batches.back().size() < min_size) {
        auto tail = std::move(batches.back());
        batches.pop_back();
        batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }
    return batches;
}

namespace {

std::size_t min_batch(const Model& m) {
    return m.config().paths.aux && m.config().static_variant == StaticVariant::cluster_reference ? m.config().clusters
                                                                                                : 1;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

double checked(const Tensor& loss, const char* stage) {
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericError(std::string(stage) + ": non-finite loss");
    return v;
}

}  // namespace

SearchResult bilevel_search(Model model, const Dataset& train, const Dataset& valid, const TrainConfig& config,
                            std::uint64_t seed) {
    if (train.empty() || valid.empty()) throw DataError("bilevel search needs non-empty train and valid splits");
    if (config.search_epochs < 1) throw ConfigError("train.search_epochs must be at least 1");
    if (config.arch_lr < 0) throw ConfigError("train.arch_lr must be non-negative");
    if (model.discrete()) throw ContractError("bilevel search on a discrete model");
    Optimizer w_opt(config.optimizer);
    std::optional<Optimizer> a_opt;
    if (config.arch_lr > 0) a_opt.emplace(OptimizerConfig{OptimizerConfig::Method::adam, config.arch_lr, 0.5, 0.999});
    const auto weights = model.weights();
    const auto arch = model.arch();
    auto all = weights;
    all.insert(all.end(), arch.begin(), arch.end());
    const std::size_t min_size = min_batch(model);
    if (train.size() < min_size || valid.size() < min_size) {
        throw ConfigError("static_path.clusters exceeds the size of a split");
    }

    SearchResult result{std::move(model), {}, {}};
    const Rng shuffle(seed, "search.shuffle");
    for (std::size_t epoch = 0; epoch < config.search_epochs; ++epoch) {
        const auto tb = make_batches(shuffled(train.size(), shuffle.split(2 * epoch)), config.batch_size, min_size);
        const auto vb = make_batches(shuffled(valid.size(), shuffle.split(2 * epoch + 1)), config.batch_size, min_size);
        double total = 0.0;
        for (std::size_t step = 0; step < tb.size(); ++step) {
            Tensor loss = result.model.loss(make_batch(train, tb[step]));
            total += checked(loss, "search weight step");
            ag::backward(loss);
            w_opt.step(weights);
            zero_grad(all);
            if (a_opt && !arch.empty()) {
                Tensor vloss = result.model.loss(make_batch(valid, vb[step % vb.size()]));
                checked(vloss, "search architecture step");
                ag::backward(vloss);
                a_opt->step(arch);
                zero_grad(all);
            }
        }
        result.epoch_loss.push_back(total / static_cast<double>(tb.size()));
        result.genotypes.push_back(result.model.genotype());
    }
    return result;
}

std::vector<double> predict(const Model& model, const Dataset& ds, std::size_t batch_size) {
    if (ds.empty()) throw DataError("cannot evaluate on an empty dataset");
    ag::NoGradGuard guard;
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> probs;
    probs.reserve(ds.size());
    for (const auto& b : make_batches(order, batch_size, min_batch(model))) {
        auto y = model.forward(make_batch(ds, b)).y;
        for (double v : y.values()) {
            if (!std::isfinite(v)) throw NumericError("non-finite prediction");
            probs.push_back(v);
        }
    }
    return probs;
}

double accuracy(std::span<const double> probs, const Dataset& ds) {
    if (probs.size() != ds.size() || ds.empty()) throw DataError("accuracy: prediction count differs from dataset");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) ok += (probs[i] >= 0.5 ? 1 : 0) == ds.samples[i].label;
    return static_cast<double>(ok) / static_cast<double>(probs.size());
}

TrainResult train_weights(Model model, const Dataset& train, const Dataset& valid, const TrainConfig& config,
                          std::uint64_t seed, const std::string& stream) {
    if (train.empty() || valid.empty()) throw DataError("training needs non-empty train and valid splits");
    Optimizer opt(config.optimizer);
    const auto weights = model.weights();
    const auto all = model.all_parameters();
    const std::size_t min_size = min_batch(model);
    TrainResult result{model.clone(), accuracy(predict(model, valid, config.batch_size), valid), 0, {}};
    const Rng shuffle(seed, stream);
    for (std::size_t epoch = 1; epoch <= config.retrain_epochs; ++epoch) {
        const auto batches = make_batches(shuffled(train.size(), shuffle.split(epoch)), config.batch_size, min_size);
        double total = 0.0;
        for (const auto& b : batches) {
            Tensor loss = model.loss(make_batch(train, b));
            total += checked(loss, "retrain step");
            ag::backward(loss);
            opt.step(weights);
            zero_grad(all);
        }
        result.epoch_loss.push_back(total / static_cast<double>(batches.size()));
        const double acc = accuracy(predict(model, valid, config.batch_size), valid);
        if (acc > result.best_valid_accuracy) {
            result.best_valid_accuracy = acc;
            result.best_epoch = epoch;
            result.model = model.clone();
        }
    }
    return result;
}

TrainResult retrain_discrete(const Model& searched, const Dataset& train, const Dataset& valid,
                             const TrainConfig& config, std::uint64_t seed) {
    Model start = searched.discretize();
    if (!config.warm_start) {
        Model fresh = Model::create(start.config(), start.architecture(), true);
        fresh.freeze_delta(start.delta_frozen());
        if (start.delta_frozen()) fresh.set_delta(start.delta()[0]);
        start = std::move(fresh);
    }
    return train_weights(std::move(start), train, valid, config, seed, "retrain.shuffle");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json config_json(const ModelConfig& c) {
    return {{"dims", {c.dims.k_text, c.dims.d_text, c.dims.k_image, c.dims.d_image}},
            {"hidden", c.hidden},
            {"linear_depth", c.linear_depth},
            {"sequence_depth", c.sequence_depth},
            {"topology", to_string(c.topology)},
            {"linear_fusion_ops", c.linear_fusion_ops},
            {"linear_transform_ops", c.linear_transform_ops},
            {"sequence_transform_ops", c.sequence_transform_ops},
            {"paths", to_string(c.paths)},
            {"static_variant", to_string(c.static_variant)},
            {"clusters", c.clusters},
            {"combiner", to_string(c.combiner)},
            {"seed", c.seed}};
}

// JSON has no inf/nan; a knocked-out delta is -inf.
nlohmann::json values_json(std::span<const double> values) {
    nlohmann::json a = nlohmann::json::array();
    for (double v : values) {
        if (std::isfinite(v)) {
            a.push_back(v);
        } else {
            a.push_back(std::isnan(v) ? "nan" : v > 0 ? "inf" : "-inf");
        }
    }
    return a;
}

std::vector<double> values_from_json(const nlohmann::json& a) {
    std::vector<double> out;
    for (const auto& v : a) {
        if (v.is_number()) {
            out.push_back(v.get<double>());
            continue;
        }
        const auto s = v.get<std::string>();
        if (s == "inf") {
            out.push_back(std::numeric_limits<double>::infinity());
        } else if (s == "-inf") {
            out.push_back(-std::numeric_limits<double>::infinity());
        } else if (s == "nan") {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            throw DataError("checkpoint value '" + s + "' is not a number");
        }
    }
    return out;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 4) throw DataError("checkpoint dims must have 4 entries");
    c.dims = {d[0], d[1], d[2], d[3]};
    c.hidden = j.at("hidden").get<std::size_t>();
    c.linear_depth = j.at("linear_depth").get<std::size_t>();
    c.sequence_depth = j.at("sequence_depth").get<std::size_t>();
    c.topology = parse_topology(j.at("topology").get<std::string>());
    c.linear_fusion_ops = j.at("linear_fusion_ops").get<std::vector<std::string>>();
    c.linear_transform_ops = j.at("linear_transform_ops").get<std::vector<std::string>>();
    c.sequence_transform_ops = j.at("sequence_transform_ops").get<std::vector<std::string>>();
    c.paths = parse_path_set(j.at("paths").get<std::string>());
    c.static_variant = parse_static_variant(j.at("static_variant").get<std::string>());
    c.clusters = j.at("clusters").get<std::size_t>();
    c.combiner = parse_combiner_mode(j.at("combiner").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

std::string checkpoint_json(const Model& model, const std::string& config_echo, std::uint64_t seed,
                            std::size_t epochs) {
    nlohmann::json j;
    j["format"] = "muse-checkpoint";
    j["version"] = 1;
    j["mode"] = model.discrete() ? "discrete" : "search";
    j["model"] = config_json(model.config());
    const auto arch = model.architecture();
    j["architecture"] = {{"linear", arch.linear}, {"sequence", arch.sequence}};
    j["genotype"] = model.genotype();
    j["delta_frozen"] = model.delta_frozen();
    j["config"] = config_echo;
    j["rng"] = {{"seed", seed}, {"epochs_completed", epochs}};
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : model.all_parameters()) {
        params.push_back({{"name", p.name},
                          {"shape", p.tensor.shape()},
                          {"values", values_json(p.tensor.values())}});
    }
    j["parameters"] = std::move(params);
    return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format", "") != "muse-checkpoint") throw DataError("not a muse checkpoint");
        if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
        const bool discrete = j.at("mode").get<std::string>() == "discrete";
        ModelArchitecture arch{j.at("architecture").at("linear").get<Architecture>(),
                               j.at("architecture").at("sequence").get<Architecture>()};
        Model model = Model::create(config_from_json(j.at("model")), arch, discrete);
        model.freeze_delta(j.at("delta_frozen").get<bool>());
        std::vector<NamedTensor> stored;
        for (const auto& p : j.at("parameters")) {
            auto shape = p.at("shape").get<ag::Shape>();
            auto values = values_from_json(p.at("values"));
            if (values.size() != ag::shape_numel(shape)) {
                throw DataError("checkpoint parameter " + p.at("name").get<std::string>() + " has the wrong size");
            }
            stored.push_back({p.at("name").get<std::string>(), Tensor::from(shape, std::move(values))});
        }
        const auto params = model.all_parameters();
        const std::size_t copied = copy_parameters(stored, params);
        if (copied != params.size() || stored.size() != params.size()) {
            throw DataError("checkpoint parameters do not match the recorded architecture (" + std::to_string(copied) +
                            " of " + std::to_string(params.size()) + " matched)");
        }
        return {std::move(model), j.at("config").get<std::string>(), j.at("rng").at("seed").get<std::uint64_t>(),
                j.at("rng").at("epochs_completed").get<std::size_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const std::string& config_echo,
                     std::uint64_t seed, std::size_t epochs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << checkpoint_json(model, config_echo, seed, epochs);
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json(ss.str());
}

}  // namespace muse
