#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dalda::config {

// Strict parser for a TOML subset: [section] headers, key = value lines,
// quoted strings, integers, floats, booleans, flat scalar arrays, and #
// comments. Returns {section: {key: value}} with top-level keys at the root.
nlohmann::json parse_toml_subset(const std::string& text, const std::string& origin);
nlohmann::json parse_toml_file(const std::filesystem::path& path);

struct BackendsConfig {
    std::string embedding = "mock"; // mock | remote
    std::string chat = "mock";      // mock | remote
    std::string diffusion = "toy";  // toy | remote
    int embedding_dim = 64;
    std::string embedding_model = "mock-clip";
    std::string chat_model = "mock-chat";
    std::string diffusion_model = "toy-diffusion-v1";
    std::string embedding_endpoint;
    std::string chat_endpoint;
    std::string diffusion_endpoint;
};

struct ScoringConfig {
    double hc_boundary = 0.7;
    std::string template_text = "a photo of a {class}";
};

struct AgsSection {
    double alpha = 0.3;
    double min_low = 0.7;
    double max_low = 0.9;
    double min_high = 0.1;
    double max_high = 0.4;
    double sigma_per_example = 0.05;
};

struct PromptingConfig {
    int m = 10;
    std::string dataset_description;
    std::string description_file; // read at run time when description is empty
    std::string cache_dir;        // empty -> DALDA_CACHE_DIR or <output_root>/prompt_cache
    double temperature = 1.0;
    double top_p = 1.0;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
};

struct GenerationConfig {
    double guidance_scale = 7.5;
    int image_size = 512;
    int workers = 1;
    std::string lambda_policy = "ags"; // ags | random_scaling | fixed
    double fixed_lambda = 0.5;
    double rs_min = 0.0;
    double rs_max = 1.0;
};

struct MixingConfig {
    double synthetic_probability = 0.5;
    int epochs = 50;
    int batch_size = 32;
    int image_size = 224;
    double learning_rate = 0.0002;
    int trials = 3;
};

struct MetricsConfig {
    std::string pairing = "synthetic_vs_real";
    std::string lpips_backend = "mock"; // mock | none
};

struct DatasetConfig {
    std::string data_root;
    int n_per_class = 1;
};

struct RunConfig {
    std::uint64_t global_seed = 42;
    std::string output_root = "runs";
    BackendsConfig backends;
    ScoringConfig scoring;
    AgsSection ags;
    PromptingConfig prompting;
    GenerationConfig generation;
    MixingConfig mixing;
    MetricsConfig metrics;
    DatasetConfig dataset;

    void validate() const; // range checks; errors name the offending key

    nlohmann::json to_json() const; // canonical tree (all keys, sorted dump)
    static RunConfig from_json(const nlohmann::json& j, const std::string& origin);

    std::string serialize_toml() const;

    std::string digest() const;
    // Digest with the given dotted keys nulled out; used for sweep isolation.
    std::string digest_masking(const std::vector<std::string>& dotted_keys) const;
};

// Precedence: flag overrides > environment > file > defaults. Overrides are
// dotted keys with raw values parsed by the TOML value grammar.
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});

} // namespace dalda::config
