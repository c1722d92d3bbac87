#include "dalda/ags.hpp"

#include "dalda/errors.hpp"
#include "dalda/normal.hpp"

#include <algorithm>
#include <cmath>

namespace dalda::ags {

void AgsConfig::validate() const {
    auto check_range = [](double lo, double hi, const char* name) {
        if (!(0.0 <= lo && lo < hi && hi <= 1.0))
            throw Error(std::string("ags: invalid range ") + name + ": [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + "]");
    };
    check_range(min_low, max_low, "low");
    check_range(min_high, max_high, "high");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("ags: alpha outside (0,1)");
    if (!(sigma_per_example > 0.0)) throw Error("ags: sigma_per_example must be positive");
    if (n_examples_per_class < 1) throw Error("ags: n_examples_per_class must be >= 1");
}

double AgsConfig::sigma_for_range(double lo, double hi) const {
    // Capped at the range width; otherwise large n makes the truncation
    // degenerate toward uniform over [lo, hi].
    double sigma = sigma_per_example * static_cast<double>(n_examples_per_class);
    return std::min(sigma, hi - lo);
}

double compute_mu(double clip_score, double range_min, double range_max) {
    if (!(clip_score >= 0.0 && clip_score <= 1.0))
        throw Error("compute_mu: clip_score outside [0,1]: " + std::to_string(clip_score));
    if (!(range_min < range_max))
        throw Error("compute_mu: inverted range [" + std::to_string(range_min) + ", " +
                    std::to_string(range_max) + "]");
    return range_min + (range_max - range_min) * (1.0 - clip_score);
}

double truncnorm_sample(double mu, double sigma, double lo, double hi, Rng& rng) {
    if (!(lo < hi)) throw Error("truncnorm_sample: lo >= hi");
    if (!(sigma > 0.0)) throw Error("truncnorm_sample: sigma <= 0");
    double a = (lo - mu) / sigma;
    double b = (hi - mu) / sigma;
    // Work in the left tail where the CDF is well resolved; reflect back after.
    bool flip = (a + b) > 0.0;
    if (flip) {
        double na = -b;
        b = -a;
        a = na;
    }
    double pa = normal_cdf(a);
    double pb = normal_cdf(b);
    double u = rng.uniform01();
    double p = pa + u * (pb - pa);
    double z;
    if (p <= 0.0) {
        z = a;
    } else if (p >= 1.0) {
        z = b;
    } else {
        z = normal_quantile(p);
    }
    if (flip) z = -z;
    return std::clamp(mu + sigma * z, lo, hi);
}

double truncnorm_mean(double mu, double sigma, double lo, double hi) {
    if (!(lo < hi)) throw Error("truncnorm_mean: lo >= hi");
    if (!(sigma > 0.0)) throw Error("truncnorm_mean: sigma <= 0");
    double a = (lo - mu) / sigma;
    double b = (hi - mu) / sigma;
    double z = normal_cdf(b) - normal_cdf(a);
    if (z < 1e-300) {
        // Entire range is many sigmas away; the mass piles at the near edge.
        return mu < lo ? lo : hi;
    }
    return mu + sigma * (normal_pdf(a) - normal_pdf(b)) / z;
}

double truncnorm_cdf(double x, double mu, double sigma, double lo, double hi) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    double pa = normal_cdf((lo - mu) / sigma);
    double pb = normal_cdf((hi - mu) / sigma);
    return (normal_cdf((x - mu) / sigma) - pa) / (pb - pa);
}

LambdaSample sample_lambda(const scoring::ClipScoreRecord& record, const AgsConfig& config,
                           Rng& rng, std::uint64_t seed_tag) {
    config.validate();
    if (!(record.clip_score >= 0.0 && record.clip_score <= 1.0))
        throw Error("sample_lambda: clip_score outside [0,1]");
    LambdaSample s;
    s.group = record.group;
    if (record.group == scoring::Group::Low) {
        s.range_min = config.min_low;
        s.range_max = config.max_low;
    } else {
        s.range_min = config.min_high;
        s.range_max = config.max_high;
    }
    s.mu = compute_mu(record.clip_score, s.range_min, s.range_max);
    s.sigma = config.sigma_for_range(s.range_min, s.range_max);
    s.value = truncnorm_sample(s.mu, s.sigma, s.range_min, s.range_max, rng);
    s.seed = seed_tag;
    return s;
}

} // namespace dalda::ags
