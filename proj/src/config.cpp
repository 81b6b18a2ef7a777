#include "muse/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <utility>

#include "muse/errors.hpp"

namespace muse {

std::string format_double(double value) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, r.ptr);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
    return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": '" + v + "' is not true or false");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    if (v.empty() || v == "all") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string from_list(const std::vector<std::string>& v) {
    if (v.empty()) return "all";
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Field uint_field(T RunConfig::*outer, std::size_t T::*member) {
    return {[=](const RunConfig& c) { return std::to_string(c.*outer.*member); },
            [=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = to_uint(k, v); }};
}

template <class T>
Field double_field(T RunConfig::*outer, double T::*member) {
    return {[=](const RunConfig& c) { return format_double(c.*outer.*member); },
            [=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = to_double(k, v); }};
}

Field dims_field(std::size_t FeatureDims::*member) {
    return {[=](const RunConfig& c) { return std::to_string(c.data.dims.*member); },
            [=](RunConfig& c, const std::string& k, const std::string& v) {
                c.data.dims.*member = to_uint(k, v);
                c.model.dims = c.data.dims;
            }};
}

Field list_field(std::vector<std::string> ModelConfig::*member) {
    return {[=](const RunConfig& c) { return from_list(c.model.*member); },
            [=](RunConfig& c, const std::string&, const std::string& v) { c.model.*member = to_list(v); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = {
        {"seed",
         {[](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_uint(k, v); }}},
        {"data.path",
         {[](const RunConfig& c) { return c.data_path; },
          [](RunConfig& c, const std::string&, const std::string& v) { c.data_path = v; }}},
        {"data.n", uint_field(&RunConfig::data, &SyntheticConfig::n)},
        {"data.rule",
         {[](const RunConfig& c) { return std::string(to_string(c.data.rule)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.data.rule = parse_planted_rule(v); }}},
        {"data.noise", double_field(&RunConfig::data, &SyntheticConfig::noise)},
        {"data.margin", double_field(&RunConfig::data, &SyntheticConfig::margin)},
        {"data.missing_text_rate", double_field(&RunConfig::data, &SyntheticConfig::missing_text_rate)},
        {"data.missing_image_rate", double_field(&RunConfig::data, &SyntheticConfig::missing_image_rate)},
        {"data.k_text", dims_field(&FeatureDims::k_text)},
        {"data.d_text", dims_field(&FeatureDims::d_text)},
        {"data.k_image", dims_field(&FeatureDims::k_image)},
        {"data.d_image", dims_field(&FeatureDims::d_image)},
        {"data.partial",
         {[](const RunConfig& c) { return std::string(c.partial ? "true" : "false"); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.partial = to_bool(k, v); }}},
        {"split.test_fraction",
         {[](const RunConfig& c) { return format_double(c.test_fraction); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.test_fraction = to_double(k, v); }}},
        {"split.valid_fraction",
         {[](const RunConfig& c) { return format_double(c.valid_fraction); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.valid_fraction = to_double(k, v); }}},
        {"model.hidden", uint_field(&RunConfig::model, &ModelConfig::hidden)},
        {"model.linear_depth", uint_field(&RunConfig::model, &ModelConfig::linear_depth)},
        {"model.sequence_depth", uint_field(&RunConfig::model, &ModelConfig::sequence_depth)},
        {"model.topology",
         {[](const RunConfig& c) { return std::string(to_string(c.model.topology)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.model.topology = parse_topology(v); }}},
        {"model.paths",
         {[](const RunConfig& c) { return to_string(c.model.paths); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.model.paths = parse_path_set(v); }}},
        {"model.linear_fusion_ops", list_field(&ModelConfig::linear_fusion_ops)},
        {"model.linear_transform_ops", list_field(&ModelConfig::linear_transform_ops)},
        {"model.sequence_transform_ops", list_field(&ModelConfig::sequence_transform_ops)},
        {"static_path.variant",
         {[](const RunConfig& c) { return std::string(to_string(c.model.static_variant)); },
          [](RunConfig& c, const std::string&, const std::string& v) {
              c.model.static_variant = parse_static_variant(v);
          }}},
        {"static_path.clusters", uint_field(&RunConfig::model, &ModelConfig::clusters)},
        {"combiner.mode",
         {[](const RunConfig& c) { return std::string(to_string(c.model.combiner)); },
          [](RunConfig& c, const std::string&, const std::string& v) { c.model.combiner = parse_combiner_mode(v); }}},
        {"train.batch_size", uint_field(&RunConfig::train, &TrainConfig::batch_size)},
        {"train.search_epochs", uint_field(&RunConfig::train, &TrainConfig::search_epochs)},
        {"train.retrain_epochs", uint_field(&RunConfig::train, &TrainConfig::retrain_epochs)},
        {"train.arch_lr", double_field(&RunConfig::train, &TrainConfig::arch_lr)},
        {"train.optimizer",
         {[](const RunConfig& c) {
              return std::string(c.train.optimizer.method == OptimizerConfig::Method::sgd ? "sgd" : "adam");
          },
          [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "sgd") {
                  c.train.optimizer.method = OptimizerConfig::Method::sgd;
              } else if (v == "adam") {
                  c.train.optimizer.method = OptimizerConfig::Method::adam;
              } else {
                  throw ConfigError(k + ": expected sgd or adam, got '" + v + "'");
              }
          }}},
        {"train.lr",
         {[](const RunConfig& c) { return format_double(c.train.optimizer.lr); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.train.optimizer.lr = to_double(k, v); }}},
        {"train.weight_decay",
         {[](const RunConfig& c) { return format_double(c.train.optimizer.weight_decay); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.optimizer.weight_decay = to_double(k, v);
          }}},
        {"train.warm_start",
         {[](const RunConfig& c) { return std::string(c.train.warm_start ? "true" : "false"); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.train.warm_start = to_bool(k, v); }}},
        {"eval.batch_size",
         {[](const RunConfig& c) { return std::to_string(c.eval_batch_size); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_batch_size = to_uint(k, v); }}},
        {"eval.baseline",
         {[](const RunConfig& c) { return std::string(c.baseline ? "true" : "false"); },
          [](RunConfig& c, const std::string& k, const std::string& v) { c.baseline = to_bool(k, v); }}},
        {"ablation.path",
         {[](const RunConfig& c) { return std::string(to_string(c.ablation_path)); },
          [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "linear") {
                  c.ablation_path = PathKind::linear;
              } else if (v == "sequence") {
                  c.ablation_path = PathKind::sequence;
              } else {
                  throw ConfigError(k + ": expected linear or sequence, got '" + v + "'");
              }
          }}},
    };
    return f;
}

void validate(const RunConfig& c) {
    if (c.train.optimizer.lr <= 0) throw ConfigError("train.lr must be positive");
    if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (c.eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
    if (c.train.arch_lr < 0) throw ConfigError("train.arch_lr must be non-negative");
    if (!(c.test_fraction > 0 && c.test_fraction < 1)) throw ConfigError("split.test_fraction must lie in (0, 1)");
    if (!(c.valid_fraction > 0 && c.valid_fraction < 1)) throw ConfigError("split.valid_fraction must lie in (0, 1)");
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(config, key, value);
}

RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::stringstream ss(text);
    std::string line;
    for (std::size_t no = 1; std::getline(ss, line); ++no) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
        try {
            set_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(no) + ": " + e.what());
        } catch (const Error& e) {
            throw ConfigError("line " + std::to_string(no) + ": " + e.what());
        }
    }
    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like key=value");
    RunConfig next = config;
    set_value(next, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    validate(next);
    config = std::move(next);
}

void apply_environment(RunConfig& config) {
    if (const char* s = std::getenv("MUSE_SEED"); s && *s) {
        try {
            set_value(config, "seed", s);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("MUSE_SEED: ") + e.what());
        }
    }
}

std::string config_echo(const RunConfig& config) {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + " = " + f.get(config) + "\n";
    return out;
}

}  // namespace muse
