#include "dalda/metrics.hpp"

#include "dalda/errors.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

namespace dalda::metrics {

using nlohmann::json;

const char* to_string(PairingMode m) {
    return m == PairingMode::synthetic_vs_real ? "synthetic_vs_real" : "synthetic_vs_synthetic";
}

PairingMode pairing_mode_from_string(const std::string& s) {
    if (s == "synthetic_vs_real") return PairingMode::synthetic_vs_real;
    if (s == "synthetic_vs_synthetic") return PairingMode::synthetic_vs_synthetic;
    throw Error("unknown pairing mode: " + s);
}

double clip_i(const std::vector<backends::EmbeddingVector>& set_a,
              const std::vector<backends::EmbeddingVector>& set_b, bool exclude_index_pairs) {
    if (set_a.empty() || set_b.empty()) throw Error("clip_i: empty embedding set");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < set_a.size(); ++i)
        for (std::size_t j = 0; j < set_b.size(); ++j) {
            if (exclude_index_pairs && i == j) continue;
            sum += backends::cosine(set_a[i], set_b[j]); // throws on dim mismatch
            ++pairs;
        }
    if (pairs == 0) throw Error("clip_i: no pairs after excluding self comparisons");
    return sum / static_cast<double>(pairs);
}

double MockPerceptualBackend::distance(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw Error("perceptual distance: image size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        sum += std::abs(static_cast<int>(a.pixels[i]) - static_cast<int>(b.pixels[i]));
    return sum / static_cast<double>(a.pixels.size()) / 255.0;
}

backends::BackendDescriptor MockPerceptualBackend::descriptor() const {
    return {backends::BackendDescriptor::Kind::embedding, "mock-perceptual", std::nullopt, true};
}

double lpips_distance(const Image& a, const Image& b, PerceptualBackend& backend) {
    if (a.width != b.width || a.height != b.height)
        throw Error("lpips_distance: image size mismatch");
    return backend.distance(a, b);
}

DiversityReport diversity_report(const dataset::Manifest& manifest,
                                 const dataset::Catalog& catalog,
                                 backends::EmbeddingBackend& embedder,
                                 PerceptualBackend* perceptual, PairingMode mode) {
    auto gens = manifest.records_of_kind("generation");
    std::map<std::string, std::vector<const json*>> by_class;
    for (const auto& g : gens)
        if (g.value("status", "") == "ok") by_class[g.value("class_name", "")].push_back(&g);
    if (by_class.empty()) throw Error("diversity_report: manifest has no generation records");

    DiversityReport report;
    report.pairing_mode = mode;
    if (!perceptual)
        report.warnings.push_back("no perceptual backend configured; LPIPS omitted");

    for (const auto& [cls, recs] : by_class) {
        std::vector<Image> syn_images;
        std::vector<backends::EmbeddingVector> syn;
        std::set<std::string> source_ids;
        for (const json* r : recs) {
            Image img = read_ppm_file((*r)["output_path"].get<std::string>());
            syn.push_back(embedder.embed_image(img));
            syn_images.push_back(std::move(img));
            source_ids.insert((*r)["source_image_id"].get<std::string>());
        }

        ClassDiversity entry;
        if (mode == PairingMode::synthetic_vs_synthetic) {
            if (syn.size() < 2) {
                std::string w = "class \"" + cls + "\" has " + std::to_string(syn.size()) +
                                " synthetic image(s); skipped in synthetic_vs_synthetic mode";
                std::cerr << "warning: " << w << "\n";
                report.warnings.push_back(w);
                continue;
            }
            entry.clip_i = clip_i(syn, syn, true);
        } else {
            std::vector<backends::EmbeddingVector> real;
            for (const auto& sid : source_ids) {
                const dataset::LabeledImage* src = catalog.find(sid);
                if (src) real.push_back(embedder.embed_image(catalog.load_image(*src)));
            }
            if (real.empty()) {
                std::string w = "class \"" + cls + "\" has no resolvable real images; skipped";
                std::cerr << "warning: " << w << "\n";
                report.warnings.push_back(w);
                continue;
            }
            entry.clip_i = clip_i(syn, real, false);
        }

        if (perceptual && syn_images.size() >= 2) {
            double sum = 0.0;
            std::size_t pairs = 0;
            for (std::size_t i = 0; i < syn_images.size(); ++i)
                for (std::size_t j = i + 1; j < syn_images.size(); ++j) {
                    sum += lpips_distance(syn_images[i], syn_images[j], *perceptual);
                    ++pairs;
                }
            entry.lpips = sum / static_cast<double>(pairs);
        }
        report.per_class[cls] = entry;
    }

    if (!report.per_class.empty()) {
        ClassDiversity agg;
        double lpips_sum = 0.0;
        bool all_lpips = true;
        for (const auto& [cls, e] : report.per_class) {
            agg.clip_i += e.clip_i;
            if (e.lpips)
                lpips_sum += *e.lpips;
            else
                all_lpips = false;
        }
        agg.clip_i /= static_cast<double>(report.per_class.size());
        // Only aggregate LPIPS when every class reported it; a partial mean
        // would silently compare different class subsets.
        if (all_lpips) agg.lpips = lpips_sum / static_cast<double>(report.per_class.size());
        report.aggregate = agg;
    }
    return report;
}

TrialSummary trial_stats(const std::vector<double>& values) {
    if (values.empty()) throw Error("trial_stats: empty value list");
    TrialSummary s;
    s.values = values;
    s.n_trials = static_cast<int>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    // A constant sequence has std 0 exactly; (3x)/3 may not round back to x,
    // so the deviation loop would otherwise leave ~1e-16 of residue.
    bool constant = std::all_of(values.begin(), values.end(),
                                [&](double v) { return v == values.front(); });
    if (values.size() >= 2 && !constant) {
        double acc = 0.0;
        for (double v : values) acc += (v - s.mean) * (v - s.mean);
        s.std_dev = std::sqrt(acc / static_cast<double>(values.size() - 1));
    }
    return s;
}

TTestResult two_sample_t(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw Error("two_sample_t: need >= 2 values per group");
    TrialSummary sa = trial_stats(a);
    TrialSummary sb = trial_stats(b);
    double na = static_cast<double>(a.size());
    double nb = static_cast<double>(b.size());
    TTestResult res;
    res.df = static_cast<int>(na + nb - 2);
    double sp2 = ((na - 1) * sa.std_dev * sa.std_dev + (nb - 1) * sb.std_dev * sb.std_dev) /
                 static_cast<double>(res.df);
    double se = std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
    double diff = sa.mean - sb.mean;
    if (se == 0.0) {
        res.t = diff == 0.0 ? 0.0 : (diff > 0 ? HUGE_VAL : -HUGE_VAL);
        res.p = diff == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t = diff / se;
    boost::math::students_t dist(static_cast<double>(res.df));
    res.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(res.t)));
    return res;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

ReportFiles emit_report(const dataset::Manifest& manifest, const std::filesystem::path& out_dir) {
    auto records = manifest.records_of_kind("metric");
    if (records.empty()) throw Error("emit_report: manifest has no metric records");
    std::filesystem::create_directories(out_dir);

    // Rows keyed (name, class, method); values aggregate across trials.
    std::map<std::string, std::vector<double>> groups;
    for (const auto& r : records) {
        std::string key = r.value("name", "");
        if (r.contains("class")) key += "[" + r["class"].get<std::string>() + "]";
        if (r.contains("method")) key += " " + r["method"].get<std::string>();
        if (r.contains("x")) key += " @" + fmt(r["x"].get<double>());
        groups[key].push_back(r.value("value", 0.0));
    }

    ReportFiles files;
    files.table = out_dir / "report.txt";
    {
        std::ofstream out(files.table);
        if (!out) throw Error("cannot write report table: " + files.table.string());
        out << "metric  n  mean  std\n";
        for (const auto& [key, values] : groups) {
            TrialSummary s = trial_stats(values);
            out << key << "  " << s.n_trials << "  " << fmt(s.mean) << "  " << fmt(s.std_dev)
                << "\n";
        }
    }

    files.plot_data = out_dir / "plot_data.jsonl";
    {
        std::ofstream out(files.plot_data);
        if (!out) throw Error("cannot write plot data: " + files.plot_data.string());
        for (const auto& r : records) {
            if (!r.contains("x")) continue;
            json row = {{"series",
                         r.value("name", "") +
                             (r.contains("method") ? ":" + r["method"].get<std::string>() : "")},
                        {"x", r["x"]},
                        {"y", r.value("value", 0.0)},
                        {"trial", r.value("trial", 0)}};
            out << row.dump() << "\n";
        }
    }
    return files;
}

} // namespace dalda::metrics
