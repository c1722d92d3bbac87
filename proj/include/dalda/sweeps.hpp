#pragma once

#include "dalda/config.hpp"
#include "dalda/metrics.hpp"
#include "dalda/rng.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dalda::sweeps {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SweepVariable { lambda_fixed, m_prompts, n_shots };
enum class SweepPolicy { ags, rs, fixed };

const char* to_string(SweepVariable v);
SweepVariable sweep_variable_from_string(const std::string& s);
const char* to_string(SweepPolicy p);
SweepPolicy sweep_policy_from_string(const std::string& s);

struct SweepSpec {
    SweepVariable variable = SweepVariable::lambda_fixed;
    std::vector<double> values; // non-empty, strictly increasing
    SweepPolicy policy = SweepPolicy::fixed;
    int trials = 1;

    void validate() const;
};

// Spec file: flat key-value text with keys variable, values, policy, trials.
SweepSpec load_sweep_spec(const std::filesystem::path& path);

// Uniform draw on [lo, hi); the Random Scaling baseline's lambda.
double random_scaling_lambda(double range_lo, double range_hi, Rng& rng);

// Dotted config key the sweep varies.
std::string swept_key(SweepVariable v);

// Keys that legitimately differ between two sweep points: the swept key plus
// per-point plumbing (output root, per-trial seed). Masking these, every
// point of one sweep must produce the same config digest.
std::vector<std::string> masked_keys(const SweepSpec& spec);

// Base config with one (value, trial) point applied. The seed depends only on
// the trial so that points pair across values and policies.
config::RunConfig apply_point(const config::RunConfig& base, const SweepSpec& spec, double value,
                              int trial, const std::filesystem::path& point_root);

struct SweepPoint {
    double value = 0.0;
    int trial = 0;
    bool ok = false;
    std::string error;
    std::filesystem::path output_root;
    std::optional<double> accuracy; // mean over the run's accuracy records
};

struct SweepResult {
    std::vector<SweepPoint> points;
    int failed_points = 0;
    std::filesystem::path table;     // out_dir/sweep.txt
    std::filesystem::path plot_data; // out_dir/plot_data.jsonl
};

// One full pipeline run per (value, trial); point failures are recorded and
// the sweep continues. Emits a combined plot series plus a per-policy mean
// reference line.
SweepResult run_sweep(const SweepSpec& spec, const config::RunConfig& base,
                      const std::filesystem::path& out_dir);

struct PolicyComparison {
    std::vector<double> ags_accuracy; // per training trial, ascending trial
    std::vector<double> rs_accuracy;  // paired with ags_accuracy by trial
    metrics::TrialSummary ags_stats;
    metrics::TrialSummary rs_stats;
    metrics::TTestResult t_test; // meaningful when both sides have >= 2 trials
    std::filesystem::path ags_manifest;
    std::filesystem::path rs_manifest;
};

// Runs the pipeline twice, identical except generation.lambda_policy, with
// identical seeds so per-trial accuracies pair by construction.
PolicyComparison policy_compare(const config::RunConfig& base,
                                const std::filesystem::path& out_dir);

} // namespace dalda::sweeps
