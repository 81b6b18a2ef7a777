#include "muse/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "muse/errors.hpp"
#include "muse/rng.hpp"

namespace muse {

using ag::Tensor;

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.dims = dims;
    out.provenance = provenance;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples.at(i));
    return out;
}

const char* to_string(PlantedRule rule) {
    switch (rule) {
        case PlantedRule::sum: return "sum";
        case PlantedRule::max: return "max";
        case PlantedRule::interaction: return "interaction";
    }
    return "?";
}

PlantedRule parse_planted_rule(const std::string& text) {
    if (text == "sum") return PlantedRule::sum;
    if (text == "max") return PlantedRule::max;
    if (text == "interaction") return PlantedRule::interaction;
    throw ConfigError("data.rule must be sum, max or interaction, got '" + text + "'");
}

std::string planted_fusion_operator(PlantedRule rule) {
    switch (rule) {
        case PlantedRule::sum: return "Sum";
        case PlantedRule::max: return "Max";
        case PlantedRule::interaction: return "Concat";
    }
    return "Sum";
}

double max_rule_threshold() {
    // Solve Phi(t) = sqrt(1/2) by bisection; Phi(t) = erfc(-t / sqrt 2) / 2.
    const double target = std::sqrt(0.5);
    double lo = -5.0, hi = 5.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

namespace {

void check_dims(const FeatureDims& d) {
    if (d.k_text == 0 || d.d_text == 0 || d.k_image == 0 || d.d_image == 0) {
        throw ConfigError("feature dimensions must all be positive");
    }
}

std::vector<double> normal_matrix(Rng rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double decision_score(PlantedRule rule, double ut, double uv, double tau) {
    switch (rule) {
        case PlantedRule::sum: return ut + uv;
        case PlantedRule::max: return std::max(ut, uv) - tau;
        case PlantedRule::interaction: return ut * uv;
    }
    return 0.0;
}

Tensor planted_matrix(Rng& rng, double u, const std::vector<double>& pattern, std::size_t k, std::size_t d,
                      double noise) {
    std::vector<double> v(k * d);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = u * pattern[i] + noise * rng.normal();
        v[i] = static_cast<double>(static_cast<float>(x));
    }
    return Tensor::from({k, d}, std::move(v));
}

std::string sample_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn-%06zu", i);
    return buf;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& c) {
    check_dims(c.dims);
    if (c.n == 0) throw ConfigError("data.n must be positive");
    if (c.noise < 0 || c.margin < 0) throw ConfigError("data.noise and data.margin must be non-negative");
    for (double r : {c.missing_text_rate, c.missing_image_rate}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("missing-modality rates must lie in [0, 1]");
    }
    if (c.missing_text_rate + c.missing_image_rate > 1.0) {
        throw ConfigError("missing_text_rate + missing_image_rate exceeds 1, so some sample would lose both modalities");
    }
    if (c.rule == PlantedRule::interaction && c.margin >= 4.0) throw ConfigError("data.margin too large for the rule");
    const double tau = max_rule_threshold();
    const auto& d = c.dims;
    const auto text_pattern = normal_matrix(Rng(c.seed, "pattern.text"), d.k_text * d.d_text);
    const auto image_pattern = normal_matrix(Rng(c.seed, "pattern.image"), d.k_image * d.d_image);
    const Rng base(c.seed, "samples");

    Dataset ds;
    ds.dims = d;
    ds.provenance = "synthetic";
    ds.samples.reserve(c.n);
    for (std::size_t i = 0; i < c.n; ++i) {
        Rng rng = base.split(i);
        double ut = 0, uv = 0, score = 0;
        for (int attempt = 0;; ++attempt) {
            ut = rng.normal();
            uv = rng.normal();
            score = decision_score(c.rule, ut, uv, tau);
            if (std::fabs(score) >= c.margin) break;
            if (attempt > 100000) throw ConfigError("data.margin cannot be met");
        }
        Sample s;
        s.id = sample_id(i);
        s.label = score > 0 ? 1 : 0;
        const double r = rng.uniform();
        const bool drop_text = r < c.missing_text_rate;
        const bool drop_image = !drop_text && r < c.missing_text_rate + c.missing_image_rate;
        Tensor text = planted_matrix(rng, ut, text_pattern, d.k_text, d.d_text, c.noise);
        Tensor image = planted_matrix(rng, uv, image_pattern, d.k_image, d.d_image, c.noise);
        s.text = drop_text ? FeatureMatrix::absent(Modality::text, d.k_text, d.d_text)
                           : FeatureMatrix::present(Modality::text, text);
        s.image = drop_image ? FeatureMatrix::absent(Modality::image, d.k_image, d.d_image)
                             : FeatureMatrix::present(Modality::image, image);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset corrupt_partial(const Dataset& ds, std::uint64_t seed) {
    Dataset out;
    out.dims = ds.dims;
    out.provenance = ds.provenance;
    out.samples.reserve(ds.size());
    const Rng base(seed, "corrupt");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (!s.complete()) throw ContractError("corrupt_partial: sample " + s.id + " is already partial");
        Sample c = s;
        Rng rng = base.split(i);
        if (rng.coin()) {
            c.text = FeatureMatrix::absent(Modality::text, ds.dims.k_text, ds.dims.d_text);
        } else {
            c.image = FeatureMatrix::absent(Modality::image, ds.dims.k_image, ds.dims.d_image);
        }
        out.samples.push_back(std::move(c));
    }
    return out;
}

DatasetSplit split_dataset(const Dataset& ds, double test_fraction, double valid_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0 && test_fraction < 1) || !(valid_fraction >= 0 && valid_fraction < 1)) {
        throw ConfigError("split fractions must lie in [0, 1)");
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "split");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
    const std::size_t rest = ds.size() - n_test;
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(rest)));
    std::span<const std::size_t> all(order);
    DatasetSplit split;
    split.seed = seed;
    split.test = ds.subset(all.first(n_test));
    split.valid = ds.subset(all.subspan(n_test, n_valid));
    split.train = ds.subset(all.subspan(n_test + n_valid));
    return split;
}

ModalityBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    const auto& d = ds.dims;
    const std::size_t n = indices.size();
    const std::size_t tn = d.k_text * d.d_text, vn = d.k_image * d.d_image;
    std::vector<double> text(n * tn, 0.0), image(n * vn, 0.0);
    ModalityBatch b;
    b.has_text.resize(n);
    b.has_image.resize(n);
    b.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = ds.samples.at(indices[i]);
        if (!s.text.is_present() && !s.image.is_present()) throw DataError("sample " + s.id + " has no modality");
        b.has_text[i] = s.text.is_present();
        b.has_image[i] = s.image.is_present();
        b.labels[i] = s.label;
        if (s.text.is_present()) {
            auto v = s.text.values().values();
            if (v.size() != tn) throw DimensionError("sample " + s.id + ": text matrix does not match dataset dims");
            std::copy(v.begin(), v.end(), text.begin() + i * tn);
        }
        if (s.image.is_present()) {
            auto v = s.image.values().values();
            if (v.size() != vn) throw DimensionError("sample " + s.id + ": image matrix does not match dataset dims");
            std::copy(v.begin(), v.end(), image.begin() + i * vn);
        }
    }
    b.text = Tensor::from({n, d.k_text, d.d_text}, std::move(text));
    b.image = Tensor::from({n, d.k_image, d.d_image}, std::move(image));
    return b;
}

ModalityBatch make_batch(const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return make_batch(ds, all);
}

// ---------------------------------------------------------------------------
// MUSEF

namespace {

constexpr char kMagic[6] = {'M', 'U', 'S', 'E', 'F', '\0'};
constexpr std::uint8_t kTextBit = 0x1, kImageBit = 0x2, kValidBit = 0x4;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        auto c = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), c, c + n);
    }
    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float f) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u32(u);
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
    void need(std::size_t n, const char* what) const {
        if (buf.size() - pos < n) {
            throw ParseError("truncated " + std::string(what) + ": expected " + std::to_string(n) +
                                 " bytes but only " + std::to_string(buf.size() - pos) + " remain of " +
                                 std::to_string(buf.size()),
                             pos);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = buf.subspan(pos, n);
        pos += n;
        return s;
    }
    std::span<const std::uint8_t> buf;
    std::size_t pos = 0;
};

bool needs_v2(const Dataset& ds) {
    for (const auto& s : ds.samples)
        if (s.text.valid_rows || s.image.valid_rows) return true;
    return false;
}

void write_matrix(Writer& w, const FeatureMatrix& m) {
    for (double x : m.values().values()) w.f32(static_cast<float>(x));
}

Tensor read_matrix(Reader& r, std::size_t k, std::size_t d, const char* what) {
    auto raw = r.take(k * d * 4, what);
    std::vector<double> v(k * d);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
        float f;
        std::memcpy(&f, &u, 4);
        if (!std::isfinite(f)) throw ParseError(std::string("non-finite value in ") + what, r.pos - raw.size() + i * 4);
        v[i] = f;
    }
    return Tensor::from({k, d}, std::move(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_musef(const Dataset& ds) {
    check_dims(ds.dims);
    const bool v2 = needs_v2(ds);
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u16(v2 ? 2 : 1);
    w.u32(static_cast<std::uint32_t>(ds.size()));
    w.u32(static_cast<std::uint32_t>(ds.dims.k_text));
    w.u32(static_cast<std::uint32_t>(ds.dims.d_text));
    w.u32(static_cast<std::uint32_t>(ds.dims.k_image));
    w.u32(static_cast<std::uint32_t>(ds.dims.d_image));
    for (const auto& s : ds.samples) {
        w.u32(static_cast<std::uint32_t>(s.id.size()));
        w.bytes(s.id.data(), s.id.size());
        w.u8(static_cast<std::uint8_t>(s.label));
        const bool valid = v2 && (s.text.valid_rows || s.image.valid_rows);
        w.u8(static_cast<std::uint8_t>((s.text.is_present() ? kTextBit : 0) | (s.image.is_present() ? kImageBit : 0) |
                                       (valid ? kValidBit : 0)));
        if (valid) {
            w.u32(s.text.valid_rows.value_or(static_cast<std::uint32_t>(ds.dims.k_text)));
            w.u32(s.image.valid_rows.value_or(static_cast<std::uint32_t>(ds.dims.k_image)));
        }
        if (s.text.is_present()) write_matrix(w, s.text);
        if (s.image.is_present()) write_matrix(w, s.image);
    }
    return std::move(w.out);
}

Dataset decode_musef(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(sizeof kMagic, "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw ParseError("bad magic, not a MUSEF file", 0);
    const std::size_t version_at = r.pos;
    const auto version = r.u16("version");
    if (version != 1 && version != 2) {
        throw ParseError("unsupported MUSEF version " + std::to_string(version), version_at);
    }
    Dataset ds;
    ds.provenance = "file";
    const std::uint32_t n = r.u32("sample count");
    const std::size_t dims_at = r.pos;
    ds.dims.k_text = r.u32("K_T");
    ds.dims.d_text = r.u32("D_T");
    ds.dims.k_image = r.u32("K_V");
    ds.dims.d_image = r.u32("D_V");
    if (ds.dims.k_text == 0 || ds.dims.d_text == 0 || ds.dims.k_image == 0 || ds.dims.d_image == 0) {
        throw ParseError("header dimensions must be positive", dims_at);
    }
    ds.samples.reserve(std::min<std::size_t>(n, bytes.size()));
    for (std::uint32_t i = 0; i < n; ++i) {
        Sample s;
        const auto id_len = r.u32("id length");
        auto id = r.take(id_len, "id");
        s.id.assign(id.begin(), id.end());
        const std::size_t label_at = r.pos;
        const auto label = r.u8("label");
        if (label > 1) throw ParseError("label must be 0 or 1, got " + std::to_string(label), label_at);
        s.label = label;
        const std::size_t presence_at = r.pos;
        const auto presence = r.u8("presence");
        const std::uint8_t allowed = version >= 2 ? (kTextBit | kImageBit | kValidBit) : (kTextBit | kImageBit);
        if (presence & ~allowed) throw ParseError("unknown presence bits", presence_at);
        if (!(presence & (kTextBit | kImageBit))) {
            throw ParseError("sample " + s.id + " has neither text nor image", presence_at);
        }
        std::optional<std::uint32_t> text_valid, image_valid;
        if (presence & kValidBit) {
            const std::size_t at = r.pos;
            text_valid = r.u32("text validity length");
            image_valid = r.u32("image validity length");
            if (*text_valid > ds.dims.k_text || *image_valid > ds.dims.k_image) {
                throw ParseError("validity length exceeds header row count", at);
            }
        }
        if (presence & kTextBit) {
            s.text = FeatureMatrix::present(Modality::text, read_matrix(r, ds.dims.k_text, ds.dims.d_text, "text matrix"));
        } else {
            s.text = FeatureMatrix::absent(Modality::text, ds.dims.k_text, ds.dims.d_text);
        }
        if (presence & kImageBit) {
            s.image = FeatureMatrix::present(Modality::image,
                                             read_matrix(r, ds.dims.k_image, ds.dims.d_image, "image matrix"));
        } else {
            s.image = FeatureMatrix::absent(Modality::image, ds.dims.k_image, ds.dims.d_image);
        }
        s.text.valid_rows = text_valid;
        s.image.valid_rows = image_valid;
        ds.samples.push_back(std::move(s));
    }
    if (r.pos != bytes.size()) {
        throw ParseError(std::to_string(bytes.size() - r.pos) + " trailing bytes after " + std::to_string(n) +
                             " samples",
                         r.pos);
    }
    return ds;
}

void write_features(const Dataset& ds, const std::filesystem::path& path) {
    auto bytes = encode_musef(ds);
    write_file(path, bytes.data(), bytes.size());
}

Dataset read_features(const std::filesystem::path& path) { return decode_musef(read_file(path)); }

FormatCheck check_features(const std::filesystem::path& path) {
    FormatCheck c;
    try {
        auto bytes = read_file(path);
        if (bytes.size() >= 8) c.version = static_cast<std::uint16_t>(bytes[6] | (bytes[7] << 8));
        auto ds = decode_musef(bytes);
        c.ok = true;
        c.samples = ds.size();
        c.message = "ok: " + std::to_string(ds.size()) + " samples, K_T=" + std::to_string(ds.dims.k_text) +
                    " D_T=" + std::to_string(ds.dims.d_text) + " K_V=" + std::to_string(ds.dims.k_image) +
                    " D_V=" + std::to_string(ds.dims.d_image) + ", checksum " + checksum_hex(dataset_checksum(ds));
    } catch (const Error& e) {
        c.ok = false;
        c.message = e.what();
    }
    return c;
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : encode_musef(ds)) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string checksum_hex(std::uint64_t checksum) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum));
    return buf;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

nlohmann::json matrix_json(const FeatureMatrix& m) {
    if (!m.is_present()) return nullptr;
    const auto& t = m.values();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < t.dim(1); ++j) row.push_back(t[i * t.dim(1) + j]);
        rows.push_back(std::move(row));
    }
    return rows;
}

FeatureMatrix matrix_from_json(const nlohmann::json& j, Modality m, std::size_t k, std::size_t d,
                               const std::string& where) {
    if (j.is_null()) return FeatureMatrix::absent(m, k, d);
    if (!j.is_array() || j.size() != k) {
        throw DataError(where + ": " + to_string(m) + " must be null or " + std::to_string(k) + " rows");
    }
    std::vector<double> v;
    v.reserve(k * d);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != d) {
            throw DataError(where + ": " + to_string(m) + " rows must have " + std::to_string(d) + " numbers");
        }
        for (const auto& x : row) {
            if (!x.is_number()) throw DataError(where + ": non-numeric " + to_string(m) + " value");
            v.push_back(x.get<double>());
        }
    }
    return FeatureMatrix::present(m, Tensor::from({k, d}, std::move(v)));
}

}  // namespace

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
    std::string text = nlohmann::json{{"format", "musef-jsonl"},
                                      {"version", 1},
                                      {"k_text", ds.dims.k_text},
                                      {"d_text", ds.dims.d_text},
                                      {"k_image", ds.dims.k_image},
                                      {"d_image", ds.dims.d_image}}
                           .dump() +
                       "\n";
    for (const auto& s : ds.samples) {
        nlohmann::json j{{"id", s.id}, {"label", s.label}, {"text", matrix_json(s.text)}, {"image", matrix_json(s.image)}};
        text += j.dump() + "\n";
    }
    write_file(path, text.data(), text.size());
}

Dataset read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Dataset ds;
    ds.provenance = "file";
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(where + ": " + e.what());
        }
        try {
            if (!header) {
                if (j.value("format", "") != "musef-jsonl") throw DataError(where + ": missing musef-jsonl header line");
                ds.dims = {j.at("k_text").get<std::size_t>(), j.at("d_text").get<std::size_t>(),
                           j.at("k_image").get<std::size_t>(), j.at("d_image").get<std::size_t>()};
                check_dims(ds.dims);
                header = true;
                continue;
            }
            Sample s;
            s.id = j.at("id").get<std::string>();
            s.label = j.at("label").get<int>();
            if (s.label != 0 && s.label != 1) throw DataError(where + ": label must be 0 or 1");
            s.text = matrix_from_json(j.at("text"), Modality::text, ds.dims.k_text, ds.dims.d_text, where);
            s.image = matrix_from_json(j.at("image"), Modality::image, ds.dims.k_image, ds.dims.d_image, where);
            if (!s.text.is_present() && !s.image.is_present()) throw DataError(where + ": sample has no modality");
            ds.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        } catch (const ConfigError& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    if (!header) throw DataError(path.string() + ": empty JSON-lines file");
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    return path.extension() == ".jsonl" ? read_jsonl(path) : read_features(path);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    if (path.extension() == ".jsonl") {
        write_jsonl(ds, path);
    } else {
        write_features(ds, path);
    }
}

}  // namespace muse
