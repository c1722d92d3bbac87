#pragma once

#include "dalda/backends.hpp"
#include "dalda/image.hpp"

#include <map>
#include <string>
#include <vector>

namespace dalda::scoring {

enum class Group { High, Low };

const char* to_string(Group g);
Group group_from_string(const std::string& s);

// Rescale applied to the raw CLIP cosine; clamping keeps (1 - score) in [0,1].
constexpr double kClipScoreScale = 2.5;
constexpr double kDefaultAlpha = 0.3;
constexpr double kDefaultHcBoundary = 0.7;

struct ClipScoreRecord {
    std::string image_id;
    std::string class_name;
    double raw_cosine = 0.0; // in [-1, 1]
    double clip_score = 0.0; // clamp(2.5 * max(raw_cosine, 0), 0, 1)
    Group group = Group::Low;
};

enum class DatasetGroup { HC, LC };

struct ScoreReport {
    std::map<std::string, double> per_class_mean;
    double dataset_mean = 0.0;
    DatasetGroup dataset_group = DatasetGroup::LC;
    std::vector<int> histogram; // 20 uniform bins over [0,1]
};

double rescale_cosine(double raw_cosine);

// High iff clip_score >= alpha (boundary counts as High).
Group classify_group(double clip_score, double alpha);

struct LabeledImageRef {
    std::string image_id;
    std::string class_name;
    const Image* image;
};

// template_text must contain exactly one "{class}" placeholder.
ClipScoreRecord clip_score(const Image& image, const std::string& class_name,
                           const std::string& template_text, backends::EmbeddingBackend& backend,
                           double alpha = kDefaultAlpha);

ScoreReport score_report(const std::vector<ClipScoreRecord>& records,
                         double hc_boundary = kDefaultHcBoundary);

// Scores every image in order; pair with score_report for the aggregate view.
std::vector<ClipScoreRecord> score_images(const std::vector<LabeledImageRef>& images,
                                          backends::EmbeddingBackend& backend,
                                          double alpha = kDefaultAlpha,
                                          const std::string& template_text = "a photo of a {class}");

std::string render_template(const std::string& template_text, const std::string& class_name);

} // namespace dalda::scoring
