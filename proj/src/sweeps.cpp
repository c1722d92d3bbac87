#include "dalda/sweeps.hpp"

#include "dalda/cli.hpp"
#include "dalda/dataset.hpp"
#include "dalda/hash.hpp"
#include "dalda/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace dalda::sweeps {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(SweepVariable v) {
    switch (v) {
    case SweepVariable::lambda_fixed: return "lambda_fixed";
    case SweepVariable::m_prompts: return "m_prompts";
    case SweepVariable::n_shots: return "n_shots";
    }
    return "lambda_fixed";
}

SweepVariable sweep_variable_from_string(const std::string& s) {
    if (s == "lambda_fixed") return SweepVariable::lambda_fixed;
    if (s == "m_prompts") return SweepVariable::m_prompts;
    if (s == "n_shots") return SweepVariable::n_shots;
    throw Error("unknown sweep variable: " + s);
}

const char* to_string(SweepPolicy p) {
    switch (p) {
    case SweepPolicy::ags: return "ags";
    case SweepPolicy::rs: return "random_scaling";
    case SweepPolicy::fixed: return "fixed";
    }
    return "ags";
}

SweepPolicy sweep_policy_from_string(const std::string& s) {
    std::string k = to_lower(s);
    if (k == "ags") return SweepPolicy::ags;
    if (k == "rs" || k == "random_scaling") return SweepPolicy::rs;
    if (k == "fixed") return SweepPolicy::fixed;
    throw Error("unknown sweep policy: " + s);
}

void SweepSpec::validate() const {
    if (values.empty()) throw Error("sweep: values must be non-empty");
    for (std::size_t i = 1; i < values.size(); ++i)
        if (!(values[i - 1] < values[i]))
            throw Error("sweep: values must be strictly increasing");
    if (trials < 1) throw Error("sweep: trials must be >= 1");
    if (variable == SweepVariable::lambda_fixed) {
        if (policy != SweepPolicy::fixed)
            throw Error("sweep: a lambda_fixed sweep requires policy FIXED");
        if (values.front() < 0.0 || values.back() > 1.0)
            throw Error("sweep: lambda values must lie in [0,1]");
    } else {
        for (double v : values)
            if (!(v >= 1.0) || v != std::floor(v))
                throw Error("sweep: " + std::string(to_string(variable)) +
                            " values must be positive integers");
    }
}

SweepSpec load_sweep_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read sweep spec: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    json tree = config::parse_toml_subset(buf.str(), path.string());

    SweepSpec spec;
    for (const auto& [key, value] : tree.items()) {
        if (key == "variable") {
            spec.variable = sweep_variable_from_string(value.get<std::string>());
        } else if (key == "values") {
            if (!value.is_array()) throw Error(path.string() + ": values must be an array");
            spec.values.clear();
            for (const auto& v : value) {
                if (!v.is_number()) throw Error(path.string() + ": values must be numbers");
                spec.values.push_back(v.get<double>());
            }
        } else if (key == "policy") {
            spec.policy = sweep_policy_from_string(value.get<std::string>());
        } else if (key == "trials") {
            if (!value.is_number_integer() && !value.is_number_unsigned())
                throw Error(path.string() + ": trials must be an integer");
            spec.trials = value.get<int>();
        } else {
            throw Error(path.string() + ": unknown sweep key \"" + key + "\"");
        }
    }
    spec.validate();
    return spec;
}

double random_scaling_lambda(double range_lo, double range_hi, Rng& rng) {
    if (!(range_lo < range_hi))
        throw Error("random scaling: range must satisfy lo < hi");
    return rng.uniform(range_lo, range_hi);
}

std::string swept_key(SweepVariable v) {
    switch (v) {
    case SweepVariable::lambda_fixed: return "generation.fixed_lambda";
    case SweepVariable::m_prompts: return "prompting.m";
    case SweepVariable::n_shots: return "dataset.n_per_class";
    }
    return "generation.fixed_lambda";
}

std::vector<std::string> masked_keys(const SweepSpec& spec) {
    return {swept_key(spec.variable), "output_root", "global_seed"};
}

config::RunConfig apply_point(const config::RunConfig& base, const SweepSpec& spec, double value,
                              int trial, const fs::path& point_root) {
    config::RunConfig cfg = base;
    cfg.output_root = point_root.string();
    cfg.global_seed = derive_seed(base.global_seed, "sweep-trial:" + std::to_string(trial));
    cfg.generation.lambda_policy = to_string(spec.policy);
    switch (spec.variable) {
    case SweepVariable::lambda_fixed: cfg.generation.fixed_lambda = value; break;
    case SweepVariable::m_prompts: cfg.prompting.m = static_cast<int>(value); break;
    case SweepVariable::n_shots: cfg.dataset.n_per_class = static_cast<int>(value); break;
    }
    return cfg;
}

namespace {

std::string format_value(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

// Per-trial accuracies from a run manifest, ordered by trial index.
std::vector<double> accuracy_by_trial(const fs::path& manifest_path) {
    dataset::Manifest manifest = dataset::manifest_load_strict(manifest_path);
    std::map<int, double> by_trial;
    for (const auto& rec : manifest.records_of_kind("metric")) {
        if (rec.value("name", "") != "accuracy") continue;
        by_trial[rec.at("trial").get<int>()] = rec.at("value").get<double>();
    }
    std::vector<double> out;
    for (const auto& [trial, value] : by_trial) out.push_back(value);
    return out;
}

} // namespace

SweepResult run_sweep(const SweepSpec& spec, const config::RunConfig& base,
                      const fs::path& out_dir) {
    spec.validate();
    base.validate();
    fs::create_directories(out_dir);

    const std::vector<std::string> masks = masked_keys(spec);
    std::string reference_digest;

    SweepResult result;
    for (double value : spec.values) {
        for (int trial = 0; trial < spec.trials; ++trial) {
            fs::path point_root =
                out_dir / ("point_v" + format_value(value) + "_t" + std::to_string(trial));
            config::RunConfig cfg = apply_point(base, spec, value, trial, point_root);

            std::string masked = cfg.digest_masking(masks);
            if (reference_digest.empty()) reference_digest = masked;
            else if (masked != reference_digest)
                throw Error("sweep isolation violated at value " + format_value(value));

            SweepPoint point;
            point.value = value;
            point.trial = trial;
            point.output_root = point_root;
            try {
                cli::RunAllResult run = cli::run_all(cfg);
                point.ok = run.exit_code == 0;
                if (!point.ok) {
                    for (const auto& s : run.stages)
                        if (s.status == cli::StageStatus::failed) point.error = s.detail;
                }
                std::vector<double> acc = accuracy_by_trial(run.manifest_path);
                if (!acc.empty()) point.accuracy = metrics::trial_stats(acc).mean;
            } catch (const std::exception& e) {
                point.ok = false;
                point.error = e.what();
            }
            if (!point.ok) ++result.failed_points;
            result.points.push_back(std::move(point));
        }
    }

    // Combined plot data: one row per point plus a constant-y reference line
    // marking the policy's mean over the sweep.
    std::string policy_name = to_string(spec.policy);
    result.plot_data = out_dir / "plot_data.jsonl";
    {
        std::ofstream out(result.plot_data, std::ios::trunc);
        if (!out) throw Error("cannot write " + result.plot_data.string());
        std::vector<double> means;
        for (const auto& p : result.points) {
            if (!p.accuracy) continue;
            json row = {{"series", "accuracy:" + policy_name},
                        {"x", p.value},
                        {"y", *p.accuracy},
                        {"trial", p.trial}};
            out << row.dump() << "\n";
            means.push_back(*p.accuracy);
        }
        if (!means.empty()) {
            double mean = metrics::trial_stats(means).mean;
            for (double value : spec.values) {
                json row = {{"series", "accuracy:" + policy_name + ":mean"},
                            {"x", value},
                            {"y", mean},
                            {"trial", -1}};
                out << row.dump() << "\n";
            }
        }
    }

    result.table = out_dir / "sweep.txt";
    {
        std::ofstream out(result.table, std::ios::trunc);
        if (!out) throw Error("cannot write " + result.table.string());
        out << "sweep " << to_string(spec.variable) << " policy " << policy_name << "\n";
        out << std::fixed << std::setprecision(6);
        for (const auto& p : result.points) {
            out << format_value(p.value) << "  trial " << p.trial << "  ";
            if (p.ok && p.accuracy) out << *p.accuracy << "\n";
            else out << "FAILED " << p.error << "\n";
        }
    }
    return result;
}

PolicyComparison policy_compare(const config::RunConfig& base, const fs::path& out_dir) {
    base.validate();
    fs::create_directories(out_dir);

    auto run_policy = [&](SweepPolicy policy) -> fs::path {
        config::RunConfig cfg = base;
        cfg.generation.lambda_policy = to_string(policy);
        cfg.output_root = (out_dir / to_string(policy)).string();
        cli::RunAllResult run = cli::run_all(cfg);
        if (run.exit_code != 0)
            throw Error(std::string("policy_compare: ") + to_string(policy) + " run failed");
        return run.manifest_path;
    };

    PolicyComparison cmp;
    cmp.ags_manifest = run_policy(SweepPolicy::ags);
    cmp.rs_manifest = run_policy(SweepPolicy::rs);
    cmp.ags_accuracy = accuracy_by_trial(cmp.ags_manifest);
    cmp.rs_accuracy = accuracy_by_trial(cmp.rs_manifest);
    if (cmp.ags_accuracy.size() != cmp.rs_accuracy.size())
        throw Error("policy_compare: trial counts differ between policies");
    if (cmp.ags_accuracy.empty()) throw Error("policy_compare: no accuracy records");
    cmp.ags_stats = metrics::trial_stats(cmp.ags_accuracy);
    cmp.rs_stats = metrics::trial_stats(cmp.rs_accuracy);
    if (cmp.ags_accuracy.size() >= 2 && cmp.rs_accuracy.size() >= 2)
        cmp.t_test = metrics::two_sample_t(cmp.ags_accuracy, cmp.rs_accuracy);
    return cmp;
}

} // namespace dalda::sweeps
