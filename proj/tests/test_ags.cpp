#include "dalda/ags.hpp"

#include "dalda/errors.hpp"
#include "dalda/normal.hpp"
#include "dalda/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace dalda;
using namespace dalda::ags;
using dalda::scoring::ClipScoreRecord;
using dalda::scoring::Group;

namespace {

// Independent oracle: sample the truncated normal by rejection from the
// parent normal, using only the parent sampler.
double rejection_mean(double mu, double sigma, double lo, double hi,
                      std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    double sum = 0.0;
    std::size_t kept = 0;
    while (kept < n) {
        double x = mu + sigma * rng.normal();
        if (x >= lo && x <= hi) {
            sum += x;
            ++kept;
        }
    }
    return sum / static_cast<double>(n);
}

double empirical_mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double empirical_std(const std::vector<double>& xs) {
    double m = empirical_mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// One-sample Kolmogorov-Smirnov statistic against the truncated-normal CDF.
double ks_statistic(std::vector<double> xs, double mu, double sigma, double lo, double hi) {
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double f = truncnorm_cdf(xs[i], mu, sigma, lo, hi);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(f - static_cast<double>(i + 1) / n));
    }
    return d;
}

} // namespace

TEST_CASE("compute_mu maps scores linearly onto the range") {
    CHECK(std::abs(compute_mu(0.8, 0.1, 0.4) - 0.16) <= 1e-12);
    CHECK(std::abs(compute_mu(0.2, 0.7, 0.9) - 0.86) <= 1e-12);
    CHECK(std::abs(compute_mu(0.0, 0.1, 0.4) - 0.4) <= 1e-12);
    CHECK(std::abs(compute_mu(1.0, 0.1, 0.4) - 0.1) <= 1e-12);
    CHECK(std::abs(compute_mu(0.5, 0.1, 0.4) - 0.25) <= 1e-12);
    CHECK_THROWS_AS(compute_mu(1.5, 0.1, 0.4), Error);
    CHECK_THROWS_AS(compute_mu(-0.1, 0.1, 0.4), Error);
    CHECK_THROWS_AS(compute_mu(0.5, 0.4, 0.1), Error);
}

TEST_CASE("ags config validates its ranges and derives sigma") {
    AgsConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.sigma_for_range(0.1, 0.4) == doctest::Approx(0.05));
    cfg.n_examples_per_class = 4;
    CHECK(cfg.sigma_for_range(0.1, 0.4) == doctest::Approx(0.2));
    cfg.n_examples_per_class = 10;
    // 0.5 exceeds the width of [0.1, 0.4]; the cap keeps sampling sane.
    CHECK(cfg.sigma_for_range(0.1, 0.4) == doctest::Approx(0.3));

    AgsConfig bad = cfg;
    bad.min_high = 0.5;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.alpha = 1.3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.n_examples_per_class = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("truncnorm_sample stays inside the support and is deterministic") {
    Rng r1(42), r2(42);
    for (int i = 0; i < 2000; ++i) {
        double a = truncnorm_sample(0.16, 0.05, 0.1, 0.4, r1);
        double b = truncnorm_sample(0.16, 0.05, 0.1, 0.4, r2);
        CHECK(a == b);
        CHECK(a >= 0.1);
        CHECK(a <= 0.4);
    }
    CHECK_THROWS(truncnorm_sample(0.2, -1.0, 0.1, 0.4, r1));
    CHECK_THROWS(truncnorm_sample(0.2, 0.05, 0.4, 0.1, r1));
}

TEST_CASE("truncnorm analytic moments match a frozen reference") {
    // Reference values computed with an independent numerical stack.
    CHECK(std::abs(truncnorm_mean(0.16, 0.05, 0.1, 0.4) - 0.17097161331415583) <= 1e-12);
    CHECK(std::abs(truncnorm_mean(0.25, 0.05, 0.1, 0.4) - 0.25) <= 1e-12);
    CHECK(std::abs(truncnorm_mean(0.86, 0.05, 0.7, 0.9) - 0.8417572708441416) <= 1e-12);
    CHECK(std::abs(truncnorm_mean(0.13, 0.05, 0.1, 0.4) - 0.15295734508852105) <= 1e-12);
    // A mean far outside the window degenerates toward the near edge.
    CHECK(truncnorm_mean(50.0, 0.05, 0.1, 0.4) == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(truncnorm_mean(-50.0, 0.05, 0.1, 0.4) == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("sampler agrees with analytic moments and a rejection oracle") {
    const double mu = 0.16, sigma = 0.05, lo = 0.1, hi = 0.4;
    const std::size_t n = 100000;
    Rng rng(1234);
    std::vector<double> xs;
    xs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) xs.push_back(truncnorm_sample(mu, sigma, lo, hi, rng));

    double analytic = truncnorm_mean(mu, sigma, lo, hi);
    double m = empirical_mean(xs);
    CHECK(std::abs(m - analytic) < 0.002);

    double oracle = rejection_mean(mu, sigma, lo, hi, n, 987);
    CHECK(std::abs(m - oracle) < 0.002);

    // Distribution shape: KS statistic well under the 0.001-level critical
    // value 1.95/sqrt(n) ~= 0.00617 for n = 1e5.
    CHECK(ks_statistic(xs, mu, sigma, lo, hi) < 0.00617);

    // Mass on both sides of the mode.
    std::size_t below = 0;
    for (double x : xs) below += x < mu ? 1 : 0;
    CHECK(below > n / 4);
    CHECK(below < 3 * n / 4);
}

TEST_CASE("a tiny sigma collapses the sample onto mu") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        double x = truncnorm_sample(0.25, 1e-9, 0.1, 0.4, rng);
        CHECK(std::abs(x - 0.25) < 1e-6);
    }
}

TEST_CASE("sample_lambda uses the group range and records its parameters") {
    AgsConfig cfg;
    ClipScoreRecord rec;
    rec.image_id = "img-7";
    rec.class_name = "beagle";
    rec.clip_score = 0.8;
    rec.group = Group::High;

    Rng rng(rng_for(11, rec.image_id, 0, "lambda"));
    LambdaSample s = sample_lambda(rec, cfg, rng);
    CHECK(s.group == Group::High);
    CHECK(s.range_min == 0.1);
    CHECK(s.range_max == 0.4);
    CHECK(std::abs(s.mu - 0.16) <= 1e-12);
    CHECK(s.sigma == doctest::Approx(0.05));
    CHECK(s.value >= 0.1);
    CHECK(s.value <= 0.4);

    rec.clip_score = 0.2;
    rec.group = Group::Low;
    Rng rng2(rng_for(11, rec.image_id, 0, "lambda"));
    LambdaSample t = sample_lambda(rec, cfg, rng2);
    CHECK(t.range_min == 0.7);
    CHECK(t.range_max == 0.9);
    CHECK(std::abs(t.mu - 0.86) <= 1e-12);
    CHECK(t.value >= 0.7);
    CHECK(t.value <= 0.9);
}

TEST_CASE("same seed reproduces lambda draws bit for bit") {
    AgsConfig cfg;
    ClipScoreRecord rec;
    rec.image_id = "img-3";
    rec.class_name = "cat";
    rec.clip_score = 0.42;
    rec.group = Group::High;

    std::vector<double> first, second;
    for (int draw = 0; draw < 10; ++draw) {
        Rng a(rng_for(99, rec.image_id, static_cast<std::uint64_t>(draw), "lambda"));
        first.push_back(sample_lambda(rec, cfg, a).value);
        Rng b(rng_for(99, rec.image_id, static_cast<std::uint64_t>(draw), "lambda"));
        second.push_back(sample_lambda(rec, cfg, b).value);
    }
    CHECK(first == second);
    // Distinct draw indices give distinct values.
    CHECK(first[0] != first[1]);
}

TEST_CASE("higher scores pull lambda down on average") {
    AgsConfig cfg;
    auto mean_for_score = [&](double score) {
        ClipScoreRecord rec;
        rec.image_id = "probe";
        rec.class_name = "c";
        rec.clip_score = score;
        rec.group = Group::High;
        double sum = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            Rng r(rng_for(7, rec.image_id, static_cast<std::uint64_t>(i), "lambda"));
            sum += sample_lambda(rec, cfg, r).value;
        }
        return sum / n;
    };
    double hi_score = mean_for_score(0.95);
    double mid_score = mean_for_score(0.6);
    double lo_score = mean_for_score(0.31);
    CHECK(hi_score < mid_score);
    CHECK(mid_score < lo_score);
}

TEST_CASE("low and high groups occupy disjoint lambda ranges") {
    AgsConfig cfg;
    Rng rng(31);
    double max_high = 0.0, min_low = 1.0;
    for (int i = 0; i < 5000; ++i) {
        max_high = std::max(max_high, truncnorm_sample(0.16, 0.05, cfg.min_high, cfg.max_high, rng));
        min_low = std::min(min_low, truncnorm_sample(0.86, 0.05, cfg.min_low, cfg.max_low, rng));
    }
    CHECK(max_high <= cfg.max_high);
    CHECK(min_low >= cfg.min_low);
    CHECK(max_high < min_low); // 0.4 < 0.7 with no overlap
}

TEST_CASE("empirical std tracks sigma when truncation is mild") {
    // With the window 4+ sigmas wide around mu, truncation barely bites.
    Rng rng(77);
    std::vector<double> xs;
    for (int i = 0; i < 50000; ++i) xs.push_back(truncnorm_sample(0.25, 0.05, 0.1, 0.4, rng));
    CHECK(empirical_std(xs) == doctest::Approx(0.05).epsilon(0.03));
}
