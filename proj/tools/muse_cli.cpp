#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "muse/muse.h"

namespace {

struct Failure {
    muse_status status;
    bool reported = false;
};

void check(muse_status s) {
    if (s != MUSE_OK) throw Failure{s};
}

int exit_code(muse_status s) {
    switch (s) {
        case MUSE_OK: return 0;
        case MUSE_ERR_CONFIG: return 2;
        case MUSE_ERR_DATA: return 3;
        case MUSE_ERR_NUMERIC: return 4;
        default: return 1;
    }
}

template <class T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<muse_config, Deleter<muse_config, muse_config_free>>;
using Dataset = std::unique_ptr<muse_dataset, Deleter<muse_dataset, muse_dataset_free>>;
using Model = std::unique_ptr<muse_model, Deleter<muse_model, muse_model_free>>;
using Report = std::unique_ptr<muse_report, Deleter<muse_report, muse_report_free>>;

std::string take(char* s) {
    std::string out = s ? s : "";
    muse_string_free(s);
    return out;
}

struct Options {
    std::string config;
    std::vector<std::string> sets;
    std::string data, in, out, model, csv, table;
};

Config load_config(const Options& o) {
    muse_config* c = nullptr;
    check(o.config.empty() ? muse_config_default(&c) : muse_config_load(o.config.c_str(), &c));
    Config cfg(c);
    check(muse_config_apply_env(c));
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "muse: --set expects key=value, got '%s'\n", s.c_str());
            throw Failure{MUSE_ERR_CONFIG, true};
        }
        check(muse_config_set(c, s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()));
    }
    return cfg;
}

Dataset load_data(const std::string& path) {
    muse_dataset* d = nullptr;
    check(muse_dataset_load(path.c_str(), &d));
    return Dataset(d);
}

Model load_model(const std::string& path) {
    muse_model* m = nullptr;
    check(muse_model_load(path.c_str(), &m));
    return Model(m);
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) {
        std::fprintf(stderr, "muse: cannot write %s\n", path.c_str());
        throw Failure{MUSE_ERR_IO, true};
    }
}

void emit(const Options& o, const muse_report* r) {
    char* s = nullptr;
    check(muse_report_table(r, &s));
    const std::string table = take(s);
    check(muse_report_csv(r, &s));
    const std::string csv = take(s);
    if (!o.csv.empty()) write_file(o.csv, csv);
    if (!o.table.empty()) {
        write_file(o.table, table);
    } else {
        std::fputs(table.c_str(), stdout);
    }
}

void save_model(const muse_model* m, const std::string& path) {
    check(muse_model_save(m, path.c_str()));
    char* g = nullptr;
    check(muse_model_genotype(m, &g));
    std::fputs(take(g).c_str(), stdout);
}

void print_info(const muse_dataset* d, const std::string& path) {
    muse_dataset_info info{};
    check(muse_dataset_get_info(d, &info));
    std::printf("%s: %zu samples (%zu fake), text %zux%zu, image %zux%zu, missing text %zu, missing image %zu, "
                "checksum %016llx\n",
                path.c_str(), info.samples, info.positives, info.k_text, info.d_text, info.k_image, info.d_image,
                info.missing_text, info.missing_image, static_cast<unsigned long long>(info.checksum));
}

void add_config(CLI::App* cmd, Options& o) {
    cmd->add_option("-c,--config", o.config, "Config file (key = value lines)");
    cmd->add_option("--set", o.sets, "Override a config key: key=value (repeatable)");
}

void add_reports(CLI::App* cmd, Options& o) {
    cmd->add_option("--csv", o.csv, "Write the report as CSV");
    cmd->add_option("--table", o.table, "Write the text table here instead of stdout");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MUSE: multimodal architecture search for binary classification"};
    app.require_subcommand(1);
    app.set_version_flag("--version", muse_version());
    Options o;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_config(synth, o);
    synth->add_option("-o,--out", o.out, "Output dataset (.musef or .jsonl)")->required();

    auto* corrupt = app.add_subcommand("corrupt", "Remove one modality from every sample");
    add_config(corrupt, o);
    corrupt->add_option("-i,--in", o.in, "Complete dataset")->required();
    corrupt->add_option("-o,--out", o.out, "Output dataset")->required();

    auto* search = app.add_subcommand("search", "Run the architecture search");
    add_config(search, o);
    search->add_option("-d,--data", o.data, "Dataset")->required();
    search->add_option("-o,--out", o.out, "Checkpoint to write")->required();

    auto* discretize = app.add_subcommand("discretize", "Keep the strongest operator on every edge");
    discretize->add_option("-i,--in", o.in, "Searched checkpoint")->required();
    discretize->add_option("-o,--out", o.out, "Checkpoint to write")->required();

    auto* retrain = app.add_subcommand("retrain", "Retrain the network weights of a discrete model");
    add_config(retrain, o);
    retrain->add_option("-d,--data", o.data, "Dataset")->required();
    retrain->add_option("-i,--in", o.in, "Checkpoint")->required();
    retrain->add_option("-o,--out", o.out, "Checkpoint to write")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_config(eval, o);
    add_reports(eval, o);
    eval->add_option("-d,--data", o.data, "Dataset")->required();
    eval->add_option("-m,--model", o.model, "Checkpoint")->required();

    auto* ablate_ops = app.add_subcommand("ablate-operators", "Prune operators one at a time and retrain");
    add_config(ablate_ops, o);
    add_reports(ablate_ops, o);
    ablate_ops->add_option("-d,--data", o.data, "Dataset")->required();
    ablate_ops->add_option("-m,--model", o.model, "Searched checkpoint")->required();

    auto* ablate_paths = app.add_subcommand("ablate-paths", "Train the model without each path in turn");
    add_config(ablate_paths, o);
    add_reports(ablate_paths, o);
    ablate_paths->add_option("-d,--data", o.data, "Dataset")->required();

    auto* report = app.add_subcommand("report", "Search, discretize, retrain and report in one go");
    add_config(report, o);
    add_reports(report, o);
    report->add_option("-d,--data", o.data, "Dataset (default: as configured)");

    auto* checkcmd = app.add_subcommand("check", "Validate a MUSEF feature file");
    checkcmd->add_option("-i,--in", o.in, "Feature file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        if (synth->parsed()) {
            auto c = load_config(o);
            muse_dataset* d = nullptr;
            check(muse_dataset_generate(c.get(), &d));
            Dataset data(d);
            check(muse_dataset_save(d, o.out.c_str()));
            print_info(d, o.out);
        } else if (corrupt->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.in);
            uint64_t seed = 0;
            check(muse_config_seed(c.get(), &seed));
            muse_dataset* d = nullptr;
            check(muse_dataset_corrupt(data.get(), seed, &d));
            Dataset out(d);
            check(muse_dataset_save(d, o.out.c_str()));
            print_info(d, o.out);
        } else if (search->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.data);
            muse_model* m = nullptr;
            check(muse_search(c.get(), data.get(), &m));
            Model model(m);
            save_model(m, o.out);
        } else if (discretize->parsed()) {
            auto in = load_model(o.in);
            muse_model* m = nullptr;
            check(muse_discretize(in.get(), &m));
            Model model(m);
            save_model(m, o.out);
        } else if (retrain->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.data);
            auto in = load_model(o.in);
            muse_model* m = nullptr;
            check(muse_retrain(c.get(), data.get(), in.get(), &m));
            Model model(m);
            save_model(m, o.out);
        } else if (eval->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.data);
            auto m = load_model(o.model);
            muse_report* r = nullptr;
            check(muse_evaluate(c.get(), data.get(), m.get(), &r));
            emit(o, Report(r).get());
        } else if (ablate_ops->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.data);
            auto m = load_model(o.model);
            muse_report* r = nullptr;
            check(muse_ablate_operators(c.get(), data.get(), m.get(), &r));
            emit(o, Report(r).get());
        } else if (ablate_paths->parsed()) {
            auto c = load_config(o);
            auto data = load_data(o.data);
            muse_report* r = nullptr;
            check(muse_ablate_paths(c.get(), data.get(), &r));
            emit(o, Report(r).get());
        } else if (report->parsed()) {
            auto c = load_config(o);
            Dataset data;
            if (!o.data.empty()) data = load_data(o.data);
            muse_report* r = nullptr;
            check(muse_run_experiment(c.get(), data.get(), &r));
            emit(o, Report(r).get());
        } else if (checkcmd->parsed()) {
            char* msg = nullptr;
            const muse_status s = muse_check_features(o.in.c_str(), &msg);
            const std::string text = take(msg);
            if (s != MUSE_OK && text.empty()) throw Failure{s};
            std::printf("%s: %s\n", o.in.c_str(), text.c_str());
            if (s != MUSE_OK) return exit_code(s);
        }
    } catch (const Failure& f) {
        if (!f.reported) std::fprintf(stderr, "muse: %s\n", muse_last_error());
        return exit_code(f.status);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fflush(stdout);
    std::fprintf(stderr, "elapsed: %.2fs\n", seconds);
    return 0;
}
