#include "dalda/scoring.hpp"

#include "dalda/backends.hpp"
#include "dalda/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace dalda;
using namespace dalda::backends;
using namespace dalda::scoring;

namespace {

ClipScoreRecord make_record(const std::string& cls, const std::string& id, double score) {
    ClipScoreRecord r;
    r.image_id = id;
    r.class_name = cls;
    r.raw_cosine = score / kClipScoreScale;
    r.clip_score = score;
    r.group = classify_group(score, kDefaultAlpha);
    return r;
}

} // namespace

TEST_CASE("rescale_cosine clamps a scaled cosine into [0,1]") {
    CHECK(rescale_cosine(0.33624) == doctest::Approx(0.8406).epsilon(1e-12));
    CHECK(rescale_cosine(-0.2) == 0.0);
    CHECK(rescale_cosine(0.0) == 0.0);
    CHECK(rescale_cosine(0.6) == 1.0); // 1.5 clamps to 1
    CHECK(rescale_cosine(1.0) == 1.0);
    CHECK(rescale_cosine(0.2) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rescaling is monotone and zero on the negative branch") {
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        double c = -1.0 + 2.0 * i / 100.0;
        double s = rescale_cosine(c);
        CHECK(s >= prev - 1e-15);
        prev = s;
        if (c <= 0.0) CHECK(s == 0.0);
    }
}

TEST_CASE("group classification treats the boundary as High") {
    CHECK(classify_group(0.3, 0.3) == Group::High);
    CHECK(classify_group(0.31, 0.3) == Group::High);
    CHECK(classify_group(0.29, 0.3) == Group::Low);
    CHECK(classify_group(0.0, 0.3) == Group::Low);
    CHECK(classify_group(1.0, 0.3) == Group::High);
    CHECK_THROWS(classify_group(1.1, 0.3));
    CHECK_THROWS(classify_group(0.5, -0.1));
    CHECK_THROWS(classify_group(0.5, 1.5));
    CHECK(std::string(to_string(Group::High)) == "High");
    CHECK(group_from_string("Low") == Group::Low);
    CHECK_THROWS(group_from_string("medium"));
}

TEST_CASE("templates require exactly one class placeholder") {
    CHECK(render_template("a photo of a {class}", "beagle") == "a photo of a beagle");
    CHECK_THROWS_AS(render_template("no placeholder", "x"), Error);
    CHECK_THROWS_AS(render_template("{class} and {class}", "x"), Error);
}

TEST_CASE("clip_score is deterministic and fills every field") {
    MockEmbeddingBackend be(64);
    Image img = Image::filled(16, 16, 40, 90, 200);
    ClipScoreRecord a = clip_score(img, "cat", "a photo of a {class}", be);
    ClipScoreRecord b = clip_score(img, "cat", "a photo of a {class}", be);
    CHECK(a.raw_cosine == b.raw_cosine);
    CHECK(a.clip_score == b.clip_score);
    CHECK(a.clip_score == rescale_cosine(a.raw_cosine));
    CHECK(a.group == classify_group(a.clip_score, kDefaultAlpha));
    CHECK(a.class_name == "cat");
    CHECK(a.clip_score >= 0.0);
    CHECK(a.clip_score <= 1.0);
}

TEST_CASE("score_report aggregates per class and labels the dataset") {
    std::vector<ClipScoreRecord> recs = {
        make_record("cat", "c0", 0.9),
        make_record("cat", "c1", 0.7),
        make_record("dog", "d0", 0.8),
    };

    ScoreReport rep = score_report(recs, 0.7);
    CHECK(rep.per_class_mean.at("cat") == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rep.per_class_mean.at("dog") == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rep.dataset_mean == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rep.dataset_group == DatasetGroup::HC);

    // Published reference means and their confidence labels.
    CHECK(score_report({make_record("pets", "p", 0.8406)}, 0.7).dataset_group == DatasetGroup::HC);
    CHECK(score_report({make_record("cars", "c", 0.7782)}, 0.7).dataset_group == DatasetGroup::HC);
    CHECK(score_report({make_record("flowers", "f", 0.5548)}, 0.7).dataset_group == DatasetGroup::LC);

    // Boundary: exactly the cutoff counts as high confidence.
    CHECK(score_report({make_record("e", "e0", 0.7)}, 0.7).dataset_group == DatasetGroup::HC);

    CHECK_THROWS(score_report({}, 0.7));
}

TEST_CASE("score histogram uses 20 bins over [0,1] and counts every record") {
    std::vector<ClipScoreRecord> recs;
    for (int i = 0; i < 40; ++i)
        recs.push_back(make_record("c", "i" + std::to_string(i), i / 39.0));
    ScoreReport rep = score_report(recs, 0.7);
    REQUIRE(rep.histogram.size() == 20);
    int total = 0;
    for (int n : rep.histogram) total += n;
    CHECK(total == static_cast<int>(recs.size()));
    CHECK(rep.histogram.back() >= 1); // score 1.0 lands in the top bin
    CHECK(rep.histogram.front() >= 1);
}

TEST_CASE("score_images walks every image in order, deterministically") {
    MockEmbeddingBackend be(32);
    Image a = Image::filled(8, 8, 200, 60, 60);
    Image b = Image::filled(8, 8, 60, 200, 60);
    Image c = Image::filled(8, 8, 60, 60, 200);
    std::vector<LabeledImageRef> refs = {
        {"c0", "cat", &a},
        {"c1", "cat", &b},
        {"d0", "dog", &c},
    };

    auto r1 = score_images(refs, be);
    auto r2 = score_images(refs, be);
    REQUIRE(r1.size() == 3);
    CHECK(r1[0].image_id == "c0");
    CHECK(r1[2].class_name == "dog");
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].image_id == r2[i].image_id);
        CHECK(r1[i].clip_score == r2[i].clip_score);
        CHECK(r1[i].group == classify_group(r1[i].clip_score, kDefaultAlpha));
    }
    CHECK_THROWS(score_images({}, be));
}
