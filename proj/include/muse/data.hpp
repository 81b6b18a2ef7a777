#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "muse/features.hpp"
#include "muse/paths.hpp"

namespace muse {

struct Sample {
    std::string id;
    FeatureMatrix text;
    FeatureMatrix image;
    int label = 0;  // 1 = fake, 0 = real

    bool complete() const { return text.is_present() && image.is_present(); }
};

struct Dataset {
    FeatureDims dims;
    std::vector<Sample> samples;
    std::string provenance = "synthetic";

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    // Subset in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;
};

struct DatasetSplit {
    Dataset train;
    Dataset valid;
    Dataset test;
    std::uint64_t seed = 0;
};

enum class PlantedRule { sum, max, interaction };

const char* to_string(PlantedRule rule);
PlantedRule parse_planted_rule(const std::string& text);
// Fusion operator that matches the planted rule by construction.
std::string planted_fusion_operator(PlantedRule rule);

struct SyntheticConfig {
    std::size_t n = 1000;
    FeatureDims dims;
    PlantedRule rule = PlantedRule::sum;
    double noise = 0.1;
    double margin = 0.0;  // resample latents until |decision score| >= margin
    double missing_text_rate = 0.0;
    double missing_image_rate = 0.0;
    std::uint64_t seed = 0;
};

// Latent u_t, u_v ~ N(0, 1) decide the label through the planted rule:
//   sum:         u_t + u_v > 0
//   max:         max(u_t, u_v) > tau, tau = Phi^-1(sqrt(1/2)) for balance
//   interaction: u_t * u_v > 0
// Row r of a modality is u * pattern[r] + noise * N(0, 1), where the
// pattern matrices are shared by all samples. Values are rounded to f32.
// A sample drops at most one modality.
Dataset generate_synthetic(const SyntheticConfig& config);

// Threshold used by the max rule.
double max_rule_threshold();

// Removes exactly one modality from every sample by a fair coin per sample.
// Any already partial sample is a ContractError.
Dataset corrupt_partial(const Dataset& ds, std::uint64_t seed);

// Seeded unstratified split: `test_fraction` of all samples go to test and
// `valid_fraction` of the rest to valid.
DatasetSplit split_dataset(const Dataset& ds, double test_fraction, double valid_fraction, std::uint64_t seed);

// Stacks samples into batch tensors; values of absent modalities are never
// read.
ModalityBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
ModalityBatch make_batch(const Dataset& ds);

// MUSEF binary feature files.
std::vector<std::uint8_t> encode_musef(const Dataset& ds);
Dataset decode_musef(std::span<const std::uint8_t> bytes);
void write_features(const Dataset& ds, const std::filesystem::path& path);
Dataset read_features(const std::filesystem::path& path);

struct FormatCheck {
    bool ok = false;
    std::string message;
    std::size_t samples = 0;
    std::uint16_t version = 0;
};
FormatCheck check_features(const std::filesystem::path& path);

// FNV-1a 64 over the canonical MUSEF encoding.
std::uint64_t dataset_checksum(const Dataset& ds);
std::string checksum_hex(std::uint64_t checksum);

// JSON-lines debug format: a header line with the dimensions, then one
// object per sample with matrices as nested arrays (null when absent).
void write_jsonl(const Dataset& ds, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

// Reads MUSEF or JSON lines depending on the extension (.jsonl).
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

}  // namespace muse
