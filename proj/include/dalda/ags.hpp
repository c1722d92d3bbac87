#pragma once

#include "dalda/rng.hpp"
#include "dalda/scoring.hpp"

#include <cstdint>

namespace dalda::ags {

// Guidance-weight sampling policy. Per-group ranges bound lambda; sigma grows
// with the number of real examples per class to relax the diversity limits.
struct AgsConfig {
    double alpha = 0.3;
    double min_low = 0.7;
    double max_low = 0.9;
    double min_high = 0.1;
    double max_high = 0.4;
    double sigma_per_example = 0.05;
    int n_examples_per_class = 1;

    void validate() const; // throws on violated invariants
    double sigma_for_range(double lo, double hi) const;
};

struct LambdaSample {
    double value = 0.0;
    scoring::Group group = scoring::Group::Low;
    double mu = 0.0;
    double sigma = 0.0;
    double range_min = 0.0;
    double range_max = 0.0;
    std::uint64_t seed = 0;
};

// mu = min + (max - min) * (1 - clip_score); higher scores pull the mean down.
double compute_mu(double clip_score, double range_min, double range_max);

// One draw from N(mu, sigma^2) conditioned on [lo, hi], via the inverse-CDF
// transform: u ~ U[Phi(a), Phi(b)], value = mu + sigma * PhiInv(u). No
// rejection loop, so the draw count per sample is fixed and seeds stay aligned.
double truncnorm_sample(double mu, double sigma, double lo, double hi, Rng& rng);

// Analytic mean of the truncated normal (test oracle companion).
double truncnorm_mean(double mu, double sigma, double lo, double hi);

// Analytic CDF at x of the truncated normal.
double truncnorm_cdf(double x, double mu, double sigma, double lo, double hi);

LambdaSample sample_lambda(const scoring::ClipScoreRecord& record, const AgsConfig& config,
                           Rng& rng, std::uint64_t seed_tag = 0);

} // namespace dalda::ags
