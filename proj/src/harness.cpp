#include "muse/harness.hpp"

#include <algorithm>
#include <cstdio>

#include "muse/baseline.hpp"
#include "muse/errors.hpp"

namespace muse {

namespace {

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    ClassMetrics m{tp, fp, fn, tn};
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

[[noreturn]] void rethrow_tagged(const Error& e, const std::string& stage) {
    const std::string m = stage + ": " + e.what();
    switch (e.kind()) {
        case ErrorKind::config: throw ConfigError(m);
        case ErrorKind::data: throw DataError(m);
        case ErrorKind::numeric: throw NumericError(m);
        case ErrorKind::contract: throw ContractError(m);
        case ErrorKind::dimension: throw DimensionError(m);
        case ErrorKind::io: throw IoError(m);
    }
    throw ContractError(m);
}

template <class F>
auto staged(const std::string& stage, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        rethrow_tagged(e, stage);
    }
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

Metrics compute_metrics(std::span<const double> probs, std::span<const int> labels) {
    if (probs.empty()) throw DataError("compute_metrics: no predictions");
    if (probs.size() != labels.size()) throw DataError("compute_metrics: predictions and labels differ in length");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("compute_metrics: labels must be 0 or 1");
        const bool pred = probs[i] >= 0.5;
        if (pred && labels[i] == 1) ++tp;
        if (pred && labels[i] == 0) ++fp;
        if (!pred && labels[i] == 1) ++fn;
        if (!pred && labels[i] == 0) ++tn;
    }
    Metrics m;
    m.n = probs.size();
    m.accuracy = ratio(tp + tn, m.n);
    m.fake = class_metrics(tp, fp, fn, tn);
    m.real = class_metrics(tn, fn, fp, tp);
    return m;
}

Metrics evaluate(const Model& model, const Dataset& ds, std::size_t batch_size) {
    std::vector<int> labels;
    for (const auto& s : ds.samples) labels.push_back(s.label);
    return compute_metrics(predict(model, ds, batch_size), labels);
}

std::string to_csv(const ExperimentReport& r) {
    std::string out = "label,accuracy,fake_precision,fake_recall,fake_f1,real_precision,real_recall,real_f1,"
                      "tp,fp,fn,tn,n\n";
    for (const auto& row : r.rows) {
        const auto& m = row.metrics;
        out += row.label;
        for (double v : {m.accuracy, m.fake.precision, m.fake.recall, m.fake.f1, m.real.precision, m.real.recall,
                         m.real.f1}) {
            out += "," + format_double(v);
        }
        for (std::size_t v : {m.fake.tp, m.fake.fp, m.fake.fn, m.fake.tn, m.n}) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

std::string to_table(const ExperimentReport& r) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({r.row_header, "Acc.", "Fake P", "Fake R", "Fake F1", "Real P", "Real R", "Real F1"});
    for (const auto& row : r.rows) {
        const auto& m = row.metrics;
        cells.push_back({row.label, fixed(m.accuracy), fixed(m.fake.precision), fixed(m.fake.recall),
                         fixed(m.fake.f1), fixed(m.real.precision), fixed(m.real.recall), fixed(m.real.f1)});
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::string out = r.title + "\nseed: " + std::to_string(r.seed) + "\n\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string line;
        for (std::size_t c = 0; c < cells[i].size(); ++c) {
            const auto& cell = cells[i][c];
            const std::string pad(width[c] - cell.size(), ' ');
            line += c == 0 ? cell + pad : "  " + pad + cell;
        }
        out += line + "\n";
        if (i == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
            out += std::string(total, '-') + "\n";
        }
    }
    for (const auto& row : r.rows) {
        if (row.genotype.empty()) continue;
        out += "\n[" + row.label + "]\n" + row.genotype;
    }
    out += "\nconfig:\n" + r.config_echo;
    return out;
}

ModelConfig model_config(const RunConfig& c) {
    ModelConfig m = c.model;
    m.dims = c.data.dims;
    m.seed = c.seed;
    return m;
}

PreparedData prepare_data(RunConfig& c, const Dataset* given) {
    return staged("data", [&] {
        PreparedData p;
        if (given) {
            p.full = *given;
            c.data.dims = p.full.dims;
        } else if (c.data_path.empty()) {
            SyntheticConfig sc = c.data;
            sc.seed = c.seed;
            p.full = generate_synthetic(sc);
        } else {
            p.full = load_dataset(c.data_path);
            c.data.dims = p.full.dims;
        }
        if (c.partial) p.full = corrupt_partial(p.full, c.seed);
        p.split = split_dataset(p.full, c.test_fraction, c.valid_fraction, c.seed);
        if (p.split.train.empty() || p.split.valid.empty() || p.split.test.empty()) {
            throw ConfigError("dataset of " + std::to_string(p.full.size()) + " samples leaves an empty split");
        }
        c.model.dims = c.data.dims;
        return p;
    });
}

SearchResult run_search(const RunConfig& c, const DatasetSplit& split) {
    return staged("search", [&] {
        return bilevel_search(Model::create(model_config(c)), split.train, split.valid, c.train, c.seed);
    });
}

ExperimentReport run_experiment(RunConfig c, const Dataset* given) {
    auto data = prepare_data(c, given);
    ExperimentReport r;
    r.title = "MUSE experiment";
    r.seed = c.seed;
    r.config_echo = config_echo(c);
    auto searched = run_search(c, data.split);
    r.rows.push_back({"MUSE", staged("evaluate", [&] { return evaluate(searched.model, data.split.test,
                                                                        c.eval_batch_size); }),
                      searched.model.genotype()});
    auto retrained = staged("retrain", [&] {
        return retrain_discrete(searched.model, data.split.train, data.split.valid, c.train, c.seed);
    });
    r.rows.push_back({"MUSE-discrete",
                      staged("evaluate", [&] { return evaluate(retrained.model, data.split.test, c.eval_batch_size); }),
                      retrained.model.genotype()});
    if (c.baseline) {
        auto base = staged("baseline", [&] {
            return train_baseline(data.split.train, data.split.valid, c.train, c.model.hidden,
                                  c.train.search_epochs + c.train.retrain_epochs, c.seed);
        });
        std::vector<int> labels;
        for (const auto& s : data.split.test.samples) labels.push_back(s.label);
        r.rows.push_back({"Concat Baseline",
                          compute_metrics(predict(base.model, data.split.test, c.eval_batch_size), labels), ""});
    }
    return r;
}

std::string operator_count_label(std::size_t count, std::size_t total) {
    return count == total ? "All Operators" : std::to_string(count) + " Operators";
}

ExperimentReport run_operator_ablation(const RunConfig& c, const Model& searched, const DatasetSplit& split) {
    const CellChain* chain = searched.chain(c.ablation_path);
    if (!chain) {
        throw ConfigError(std::string("operator ablation needs the ") + to_string(c.ablation_path) + " path");
    }
    if (searched.discrete()) throw ContractError("operator ablation needs a searched (mixed) checkpoint");
    if (chain->edges().size() < 2) throw ConfigError("operator ablation needs at least one transformation edge");
    const std::size_t total = chain->edges()[1].ops.size();
    for (const auto& e : chain->edges()) {
        if (!e.fusion() && e.ops.size() != total) {
            throw ContractError("transformation edges hold different operator counts");
        }
    }
    ExperimentReport r;
    r.title = std::string("Operator ablation (") + to_string(c.ablation_path) + " path)";
    r.row_header = "Number of Operators";
    r.seed = c.seed;
    r.config_echo = config_echo(c);
    Model current = searched.clone();
    for (std::size_t count = total; count >= 1; --count) {
        const std::string label = operator_count_label(count, total);
        auto trained = staged(label, [&] {
            return train_weights(current.clone(), split.train, split.valid, c.train, c.seed, "ablation.retrain");
        });
        r.rows.push_back({label, staged(label, [&] { return evaluate(trained.model, split.test, c.eval_batch_size); }),
                          trained.model.genotype()});
        if (count > 1) current = current.prune_lowest(c.ablation_path);
    }
    return r;
}

ExperimentReport run_path_ablation(const RunConfig& c, const DatasetSplit& split) {
    ExperimentReport r;
    r.title = "Path ablation";
    r.row_header = "Ablation";
    r.seed = c.seed;
    r.config_echo = config_echo(c);
    const std::pair<const char*, PathSet> variants[] = {
        {"w/o Linear", {false, true, true}},
        {"w/o Sequence", {true, false, true}},
        {"w/o Auxiliary", {true, true, false}},
        {"MUSE", {true, true, true}},
    };
    for (const auto& [label, paths] : variants) {
        RunConfig v = c;
        v.model.paths = paths;
        auto searched = staged(label, [&] {
            return bilevel_search(Model::create(model_config(v)), split.train, split.valid, v.train, v.seed);
        });
        auto retrained = staged(label, [&] {
            return retrain_discrete(searched.model, split.train, split.valid, v.train, v.seed);
        });
        r.rows.push_back({label, staged(label, [&] { return evaluate(retrained.model, split.test, v.eval_batch_size); }),
                          retrained.model.genotype()});
    }
    return r;
}

}  // namespace muse
