#include "muse/muse.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "muse/errors.hpp"
#include "muse/harness.hpp"

struct muse_config {
    muse::RunConfig config;
};

struct muse_dataset {
    muse::Dataset data;
};

struct muse_model {
    muse::Model model;
    std::string config_echo;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
};

struct muse_report {
    muse::ExperimentReport report;
};

namespace {

thread_local std::string last_error;

muse_status status_of(muse::ErrorKind kind) {
    switch (kind) {
        case muse::ErrorKind::config: return MUSE_ERR_CONFIG;
        case muse::ErrorKind::data:
        case muse::ErrorKind::dimension: return MUSE_ERR_DATA;
        case muse::ErrorKind::numeric: return MUSE_ERR_NUMERIC;
        case muse::ErrorKind::contract: return MUSE_ERR_CONTRACT;
        case muse::ErrorKind::io: return MUSE_ERR_IO;
    }
    return MUSE_ERR_INTERNAL;
}

template <class F>
muse_status guard(F&& f) {
    try {
        f();
        return MUSE_OK;
    } catch (const muse::Error& e) {
        last_error = std::string(muse::to_string(e.kind())) + ": " + e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
    } catch (const std::exception& e) {
        last_error = std::string("internal error: ") + e.what();
    } catch (...) {
        last_error = "internal error";
    }
    return MUSE_ERR_INTERNAL;
}

template <class T>
void require(const T* p, const char* what) {
    if (!p) throw muse::ContractError(std::string(what) + " must not be NULL");
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

muse::DatasetSplit split_for(muse::RunConfig& c, const muse_dataset* d) { return muse::prepare_data(c, &d->data).split; }

}  // namespace

extern "C" {

const char* muse_version(void) { return "1.0.0"; }

const char* muse_last_error(void) { return last_error.c_str(); }

const char* muse_status_name(muse_status status) {
    switch (status) {
        case MUSE_OK: return "ok";
        case MUSE_ERR_CONFIG: return "config error";
        case MUSE_ERR_DATA: return "data error";
        case MUSE_ERR_NUMERIC: return "numeric error";
        case MUSE_ERR_CONTRACT: return "contract error";
        case MUSE_ERR_IO: return "io error";
        case MUSE_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void muse_string_free(char* s) { std::free(s); }

muse_status muse_config_default(muse_config** out) {
    return guard([&] {
        require(out, "out");
        *out = new muse_config{};
    });
}

muse_status muse_config_parse(const char* text, muse_config** out) {
    return guard([&] {
        require(text, "text");
        require(out, "out");
        *out = new muse_config{muse::parse_config(text)};
    });
}

muse_status muse_config_load(const char* path, muse_config** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        *out = new muse_config{muse::load_config(path)};
    });
}

muse_status muse_config_set(muse_config* config, const char* key, const char* value) {
    return guard([&] {
        require(config, "config");
        require(key, "key");
        require(value, "value");
        muse::apply_override(config->config, std::string(key) + "=" + value);
    });
}

muse_status muse_config_apply_env(muse_config* config) {
    return guard([&] {
        require(config, "config");
        muse::apply_environment(config->config);
    });
}

muse_status muse_config_echo(const muse_config* config, char** out) {
    return guard([&] {
        require(config, "config");
        require(out, "out");
        *out = copy_string(muse::config_echo(config->config));
    });
}

muse_status muse_config_seed(const muse_config* config, uint64_t* out) {
    return guard([&] {
        require(config, "config");
        require(out, "out");
        *out = config->config.seed;
    });
}

void muse_config_free(muse_config* config) { delete config; }

muse_status muse_dataset_generate(const muse_config* config, muse_dataset** out) {
    return guard([&] {
        require(config, "config");
        require(out, "out");
        muse::SyntheticConfig sc = config->config.data;
        sc.seed = config->config.seed;
        *out = new muse_dataset{muse::generate_synthetic(sc)};
    });
}

muse_status muse_dataset_load(const char* path, muse_dataset** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        *out = new muse_dataset{muse::load_dataset(path)};
    });
}

muse_status muse_dataset_save(const muse_dataset* dataset, const char* path) {
    return guard([&] {
        require(dataset, "dataset");
        require(path, "path");
        muse::save_dataset(dataset->data, path);
    });
}

muse_status muse_dataset_corrupt(const muse_dataset* dataset, uint64_t seed, muse_dataset** out) {
    return guard([&] {
        require(dataset, "dataset");
        require(out, "out");
        *out = new muse_dataset{muse::corrupt_partial(dataset->data, seed)};
    });
}

muse_status muse_dataset_get_info(const muse_dataset* dataset, muse_dataset_info* out) {
    return guard([&] {
        require(dataset, "dataset");
        require(out, "out");
        const auto& d = dataset->data;
        muse_dataset_info info{};
        info.samples = d.size();
        info.k_text = d.dims.k_text;
        info.d_text = d.dims.d_text;
        info.k_image = d.dims.k_image;
        info.d_image = d.dims.d_image;
        for (const auto& s : d.samples) {
            info.missing_text += !s.text.is_present();
            info.missing_image += !s.image.is_present();
            info.positives += s.label == 1;
        }
        info.checksum = muse::dataset_checksum(d);
        *out = info;
    });
}

void muse_dataset_free(muse_dataset* dataset) { delete dataset; }

muse_status muse_check_features(const char* path, char** message) {
    muse::FormatCheck check;
    const muse_status s = guard([&] {
        require(path, "path");
        check = muse::check_features(path);
        if (message) *message = copy_string(check.message);
    });
    if (s != MUSE_OK) return s;
    if (!check.ok) {
        last_error = "data error: " + check.message;
        return MUSE_ERR_DATA;
    }
    return MUSE_OK;
}

muse_status muse_search(const muse_config* config, const muse_dataset* dataset, muse_model** out) {
    return guard([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(out, "out");
        muse::RunConfig c = config->config;
        const auto split = split_for(c, dataset);
        auto r = muse::run_search(c, split);
        *out = new muse_model{std::move(r.model), muse::config_echo(c), c.seed, c.train.search_epochs};
    });
}

muse_status muse_discretize(const muse_model* model, muse_model** out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        *out = new muse_model{model->model.discretize(), model->config_echo, model->seed, model->epochs};
    });
}

muse_status muse_retrain(const muse_config* config, const muse_dataset* dataset, const muse_model* model,
                         muse_model** out) {
    return guard([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(model, "model");
        require(out, "out");
        muse::RunConfig c = config->config;
        const auto split = split_for(c, dataset);
        if (model->model.config().dims != c.model.dims) {
            throw muse::DataError("the checkpoint was trained on different feature dimensions");
        }
        auto r = model->model.discrete()
                     ? muse::train_weights(model->model.clone(), split.train, split.valid, c.train, c.seed,
                                           "retrain.shuffle")
                     : muse::retrain_discrete(model->model, split.train, split.valid, c.train, c.seed);
        *out = new muse_model{std::move(r.model), muse::config_echo(c), c.seed,
                              model->epochs + c.train.retrain_epochs};
    });
}

muse_status muse_model_save(const muse_model* model, const char* path) {
    return guard([&] {
        require(model, "model");
        require(path, "path");
        muse::save_checkpoint(model->model, path, model->config_echo, model->seed, model->epochs);
    });
}

muse_status muse_model_load(const char* path, muse_model** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        auto ck = muse::load_checkpoint(path);
        *out = new muse_model{std::move(ck.model), std::move(ck.config_echo), ck.seed, ck.epochs};
    });
}

muse_status muse_model_genotype(const muse_model* model, char** out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        *out = copy_string(model->model.genotype());
    });
}

muse_status muse_model_is_discrete(const muse_model* model, int* out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        *out = model->model.discrete() ? 1 : 0;
    });
}

void muse_model_free(muse_model* model) { delete model; }

muse_status muse_evaluate(const muse_config* config, const muse_dataset* dataset, const muse_model* model,
                          muse_report** out) {
    return guard([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(model, "model");
        require(out, "out");
        muse::RunConfig c = config->config;
        const auto split = split_for(c, dataset);
        if (model->model.config().dims != c.model.dims) {
            throw muse::DataError("the checkpoint was trained on different feature dimensions");
        }
        muse::ExperimentReport r;
        r.title = "Evaluation";
        r.seed = c.seed;
        r.config_echo = muse::config_echo(c);
        r.rows.push_back({model->model.discrete() ? "MUSE-discrete" : "MUSE",
                          muse::evaluate(model->model, split.test, c.eval_batch_size), model->model.genotype()});
        *out = new muse_report{std::move(r)};
    });
}

muse_status muse_run_experiment(const muse_config* config, const muse_dataset* dataset, muse_report** out) {
    return guard([&] {
        require(config, "config");
        require(out, "out");
        *out = new muse_report{muse::run_experiment(config->config, dataset ? &dataset->data : nullptr)};
    });
}

muse_status muse_ablate_operators(const muse_config* config, const muse_dataset* dataset,
                                  const muse_model* searched, muse_report** out) {
    return guard([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(searched, "searched");
        require(out, "out");
        muse::RunConfig c = config->config;
        const auto split = split_for(c, dataset);
        *out = new muse_report{muse::run_operator_ablation(c, searched->model, split)};
    });
}

muse_status muse_ablate_paths(const muse_config* config, const muse_dataset* dataset, muse_report** out) {
    return guard([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(out, "out");
        muse::RunConfig c = config->config;
        const auto split = split_for(c, dataset);
        *out = new muse_report{muse::run_path_ablation(c, split)};
    });
}

muse_status muse_report_csv(const muse_report* report, char** out) {
    return guard([&] {
        require(report, "report");
        require(out, "out");
        *out = copy_string(muse::to_csv(report->report));
    });
}

muse_status muse_report_table(const muse_report* report, char** out) {
    return guard([&] {
        require(report, "report");
        require(out, "out");
        *out = copy_string(muse::to_table(report->report));
    });
}

muse_status muse_report_row_count(const muse_report* report, size_t* out) {
    return guard([&] {
        require(report, "report");
        require(out, "out");
        *out = report->report.rows.size();
    });
}

muse_status muse_report_row(const muse_report* report, size_t index, const char** label, double* accuracy) {
    return guard([&] {
        require(report, "report");
        if (index >= report->report.rows.size()) throw muse::ContractError("report row index out of range");
        const auto& row = report->report.rows[index];
        if (label) *label = row.label.c_str();
        if (accuracy) *accuracy = row.metrics.accuracy;
    });
}

void muse_report_free(muse_report* report) { delete report; }

}  // extern "C"
