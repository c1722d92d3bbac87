#pragma once

#include "dalda/backends.hpp"
#include "dalda/dataset.hpp"
#include "dalda/image.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dalda::metrics {

enum class PairingMode { synthetic_vs_real, synthetic_vs_synthetic };
const char* to_string(PairingMode m);
PairingMode pairing_mode_from_string(const std::string& s);

// Mean cosine over all cross pairs; with exclude_index_pairs the pairs (i,i)
// are dropped, which is the self-comparison convention when both arguments
// are the same set.
double clip_i(const std::vector<backends::EmbeddingVector>& set_a,
              const std::vector<backends::EmbeddingVector>& set_b,
              bool exclude_index_pairs = false);

class PerceptualBackend {
  public:
    virtual ~PerceptualBackend() = default;
    virtual double distance(const Image& a, const Image& b) = 0;
    virtual backends::BackendDescriptor descriptor() const = 0;
};

// Normalized mean absolute pixel difference; a stand-in with the same axioms
// (nonnegative, symmetric, zero on identical inputs).
class MockPerceptualBackend : public PerceptualBackend {
  public:
    double distance(const Image& a, const Image& b) override;
    backends::BackendDescriptor descriptor() const override;
};

double lpips_distance(const Image& a, const Image& b, PerceptualBackend& backend);

struct ClassDiversity {
    double clip_i = 0.0;
    std::optional<double> lpips;
};

struct DiversityReport {
    std::map<std::string, ClassDiversity> per_class;
    std::optional<ClassDiversity> aggregate; // unweighted class mean; absent when empty
    PairingMode pairing_mode = PairingMode::synthetic_vs_real;
    std::vector<std::string> warnings;
};

// Synthetic images come from the manifest's ok generation records; real
// images from the catalog. perceptual may be null: LPIPS is then reported
// absent, never fabricated. LPIPS always averages within-class synthetic
// pairs (needs >= 2 synthetic images for a class).
DiversityReport diversity_report(const dataset::Manifest& manifest,
                                 const dataset::Catalog& catalog,
                                 backends::EmbeddingBackend& embedder,
                                 PerceptualBackend* perceptual, PairingMode mode);

struct TrialSummary {
    std::vector<double> values;
    double mean = 0.0;
    double std_dev = 0.0; // n-1 denominator; 0 for a single value
    int n_trials = 0;
};

TrialSummary trial_stats(const std::vector<double>& values);

struct TTestResult {
    double t = 0.0;
    double p = 1.0; // two-sided
    int df = 0;
};

// Pooled-variance two-sample t test.
TTestResult two_sample_t(const std::vector<double>& a, const std::vector<double>& b);

struct ReportFiles {
    std::filesystem::path table;     // fixed-width text
    std::filesystem::path plot_data; // line-delimited {series, x, y, trial}
};

// Renders every metric record; byte-identical for identical manifests.
ReportFiles emit_report(const dataset::Manifest& manifest, const std::filesystem::path& out_dir);

} // namespace dalda::metrics
