#include "dalda/scoring.hpp"

#include "dalda/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dalda::scoring {

const char* to_string(Group g) { return g == Group::High ? "High" : "Low"; }

Group group_from_string(const std::string& s) {
    if (s == "High") return Group::High;
    if (s == "Low") return Group::Low;
    throw Error("unknown group: " + s);
}

double rescale_cosine(double raw_cosine) {
    double s = kClipScoreScale * std::max(raw_cosine, 0.0);
    return std::clamp(s, 0.0, 1.0);
}

Group classify_group(double clip_score, double alpha) {
    if (!(clip_score >= 0.0 && clip_score <= 1.0))
        throw Error("classify_group: clip_score outside [0,1]: " + std::to_string(clip_score));
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error("classify_group: alpha outside (0,1): " + std::to_string(alpha));
    return clip_score >= alpha ? Group::High : Group::Low;
}

std::string render_template(const std::string& template_text, const std::string& class_name) {
    const std::string placeholder = "{class}";
    auto first = template_text.find(placeholder);
    if (first == std::string::npos)
        throw Error("template has no {class} placeholder: " + template_text);
    if (template_text.find(placeholder, first + 1) != std::string::npos)
        throw Error("template has multiple {class} placeholders: " + template_text);
    std::string out = template_text;
    out.replace(first, placeholder.size(), class_name);
    return out;
}

ClipScoreRecord clip_score(const Image& image, const std::string& class_name,
                           const std::string& template_text, backends::EmbeddingBackend& backend,
                           double alpha) {
    std::string caption = render_template(template_text, class_name);
    backends::EmbeddingVector ei = backend.embed_image(image);
    backends::EmbeddingVector et = backend.embed_text(caption);
    ClipScoreRecord rec;
    rec.class_name = class_name;
    rec.raw_cosine = backends::cosine(ei, et);
    rec.clip_score = rescale_cosine(rec.raw_cosine);
    rec.group = classify_group(rec.clip_score, alpha);
    return rec;
}

ScoreReport score_report(const std::vector<ClipScoreRecord>& records, double hc_boundary) {
    if (records.empty()) throw Error("score_report: empty dataset");
    ScoreReport rep;
    rep.histogram.assign(20, 0);
    std::map<std::string, std::pair<double, int>> acc;
    double total = 0.0;
    for (const auto& r : records) {
        total += r.clip_score;
        auto& [sum, count] = acc[r.class_name];
        sum += r.clip_score;
        count += 1;
        int bin = std::min(19, static_cast<int>(r.clip_score * 20.0));
        rep.histogram[static_cast<std::size_t>(bin)]++;
    }
    for (const auto& [cls, sc] : acc) rep.per_class_mean[cls] = sc.first / sc.second;
    rep.dataset_mean = total / static_cast<double>(records.size());
    rep.dataset_group = rep.dataset_mean >= hc_boundary ? DatasetGroup::HC : DatasetGroup::LC;
    return rep;
}

std::vector<ClipScoreRecord> score_images(const std::vector<LabeledImageRef>& images,
                                          backends::EmbeddingBackend& backend, double alpha,
                                          const std::string& template_text) {
    if (images.empty()) throw Error("score_images: empty dataset");
    std::vector<ClipScoreRecord> records;
    records.reserve(images.size());
    for (const auto& ref : images) {
        ClipScoreRecord rec = clip_score(*ref.image, ref.class_name, template_text, backend, alpha);
        rec.image_id = ref.image_id;
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace dalda::scoring
