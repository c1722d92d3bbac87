#include "dalda/dataset.hpp"

#include "dalda/errors.hpp"
#include "dalda/image.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

using namespace dalda;
using namespace dalda::dataset;
using nlohmann::json;

namespace {

ManifestHeader header_for_tests() {
    ManifestHeader h;
    h.global_seed = 7;
    h.config_digest = "deadbeef";
    return h;
}

json record(const std::string& kind, int i) {
    return json{{"kind", kind}, {"image_id", "img_" + std::to_string(i)}, {"value", i}};
}

} // namespace

TEST_CASE("ingest assigns sorted class ids over a two-by-two catalog") {
    testutil::TempDir tmp;
    testutil::write_class_images(tmp.path(), "tabby", 2, 0, 120, 120, 125);
    testutil::write_class_images(tmp.path(), "beagle", 2, 0, 150, 100, 60);

    Catalog cat = ingest_catalog(tmp.path());
    REQUIRE(cat.images.size() == 4);
    CHECK(cat.class_names == std::vector<std::string>{"beagle", "tabby"});
    std::set<int> ids;
    for (const auto& img : cat.images) ids.insert(img.class_id);
    CHECK(ids == std::set<int>{0, 1});
    // ordered by (class_name, image_id)
    CHECK(cat.images.front().class_name == "beagle");
    CHECK(cat.images.back().class_name == "tabby");
    for (std::size_t i = 1; i < cat.images.size(); ++i) {
        auto key = [](const LabeledImage& x) { return std::pair(x.class_name, x.image_id); };
        CHECK(key(cat.images[i - 1]) < key(cat.images[i]));
    }
}

TEST_CASE("re-ingesting yields an identical catalog") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 3, 2, 1);

    Catalog a = ingest_catalog(tmp.path());
    Catalog b = ingest_catalog(tmp.path());
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].image_id == b.images[i].image_id);
        CHECK(a.images[i].class_id == b.images[i].class_id);
        CHECK(a.images[i].split == b.images[i].split);
    }
    CHECK(a.class_names == b.class_names);
}

TEST_CASE("a class with no readable images fails by name") {
    testutil::TempDir tmp;
    testutil::write_class_images(tmp.path(), "beagle", 2, 0, 150, 100, 60);
    std::filesystem::create_directories(tmp / "husky" / "train");
    testutil::write_text_file(tmp / "husky" / "train" / "bad.ppm", "not a ppm");

    CHECK_THROWS_WITH_AS(ingest_catalog(tmp.path()), doctest::Contains("husky"), Error);
}

TEST_CASE("unreadable files in a healthy class are skipped and counted") {
    testutil::TempDir tmp;
    testutil::write_class_images(tmp.path(), "beagle", 2, 0, 150, 100, 60);
    testutil::write_text_file(tmp / "beagle" / "train" / "corrupt.ppm", "junk");

    Catalog cat = ingest_catalog(tmp.path());
    CHECK(cat.images.size() == 2);
    CHECK(cat.skipped_files == 1);
}

TEST_CASE("images directly under the class folder count as train") {
    testutil::TempDir tmp;
    auto dir = tmp / "beagle";
    std::filesystem::create_directories(dir);
    write_ppm_file((dir / "loose.ppm").string(),
                   testutil::textured_image(8, 150, 100, 60, false, 1));

    Catalog cat = ingest_catalog(tmp.path());
    REQUIRE(cat.images.size() == 1);
    CHECK(cat.images[0].split == "train");
}

TEST_CASE("a 1-shot split over 37 classes selects 37 ids") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 37, 2, 0, 8);
    Catalog cat = ingest_catalog(tmp.path());

    FewShotSplit split = make_fewshot_split(cat, 1, 7);
    CHECK(split.total() == 37);
    CHECK(split.selected.size() == 37);
    for (const auto& [cls, ids] : split.selected) CHECK(ids.size() == 1);
}

TEST_CASE("splits are deterministic in the seed") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 4, 5, 0, 8);
    Catalog cat = ingest_catalog(tmp.path());

    FewShotSplit a = make_fewshot_split(cat, 2, 99);
    FewShotSplit b = make_fewshot_split(cat, 2, 99);
    CHECK(a.selected == b.selected);

    FewShotSplit c = make_fewshot_split(cat, 2, 100);
    CHECK(a.selected != c.selected); // 4 classes x C(5,2) leaves collisions unlikely
}

TEST_CASE("selected ids are distinct train images of their class") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 3, 4, 2, 8);
    Catalog cat = ingest_catalog(tmp.path());

    FewShotSplit split = make_fewshot_split(cat, 3, 5);
    for (const auto& [cls, ids] : split.selected) {
        std::set<std::string> distinct(ids.begin(), ids.end());
        CHECK(distinct.size() == ids.size());
        for (const auto& id : ids) {
            const LabeledImage* img = cat.find(id);
            REQUIRE(img != nullptr);
            CHECK(img->class_name == cls);
            CHECK(img->split == "train");
        }
    }
}

TEST_CASE("an oversized n fails naming the short class") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 2, 2, 0, 8);
    testutil::write_class_images(tmp.path(), "aardvark", 1, 0, 90, 90, 90);
    Catalog cat = ingest_catalog(tmp.path());

    CHECK_THROWS_WITH_AS(make_fewshot_split(cat, 2, 1), doctest::Contains("aardvark"), Error);
}

TEST_CASE("split files round-trip") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp.path(), 3, 3, 0, 8);
    Catalog cat = ingest_catalog(tmp.path());
    FewShotSplit split = make_fewshot_split(cat, 2, 11);

    auto path = tmp / "split.jsonl";
    save_split(split, path);
    FewShotSplit loaded = load_split(path);
    CHECK(loaded.n_per_class == split.n_per_class);
    CHECK(loaded.seed == split.seed);
    CHECK(loaded.selected == split.selected);
}

TEST_CASE("manifests round-trip three records byte for byte") {
    testutil::TempDir tmp;
    Manifest m(header_for_tests());
    m.append(record("score", 0));
    m.append(record("prompt", 1));
    m.append(record("generation", 2));

    auto path = tmp / "manifest.jsonl";
    m.save(path);
    Manifest loaded = manifest_load_strict(path);
    REQUIRE(loaded.records().size() == 3);
    CHECK(loaded.records() == m.records());
    CHECK(loaded.header().global_seed == 7);
    CHECK(loaded.header().config_digest == "deadbeef");

    auto again = tmp / "again.jsonl";
    loaded.save(again);
    CHECK(testutil::slurp(path) == testutil::slurp(again));
    CHECK(loaded.serialize() == m.serialize());
}

TEST_CASE("a truncated final line is reported with prior records recovered") {
    testutil::TempDir tmp;
    Manifest m(header_for_tests());
    m.append(record("score", 0));
    m.append(record("score", 1));
    auto path = tmp / "manifest.jsonl";
    m.save(path);

    std::string body = testutil::slurp(path);
    testutil::write_text_file(path, body + "{\"kind\":\"score\",\"tru");

    ManifestLoadResult res = manifest_load(path);
    REQUIRE(res.error.has_value());
    CHECK(res.error_line == 4); // header + 2 records + damaged line
    CHECK(res.manifest.records().size() == 2);
    CHECK(res.manifest.records() == m.records());

    CHECK_THROWS_AS(manifest_load_strict(path), Error);
}

TEST_CASE("an empty manifest file is a header error") {
    testutil::TempDir tmp;
    auto path = tmp / "empty.jsonl";
    testutil::write_text_file(path, "");
    CHECK_THROWS_WITH_AS(manifest_load(path), doctest::Contains("header"), Error);
}

TEST_CASE("schema and kind tags are enforced") {
    testutil::TempDir tmp;
    auto path = tmp / "manifest.jsonl";

    testutil::write_text_file(
        path, "{\"config_digest\":\"x\",\"global_seed\":1,\"kind\":\"header\",\"schema\":"
              "\"v999\",\"tool_version\":\"0.1.0\"}\n");
    CHECK_THROWS_WITH_AS(manifest_load(path), doctest::Contains("schema"), Error);

    Manifest m(header_for_tests());
    CHECK_THROWS_AS(m.append(json{{"kind", "unheard_of"}}), Error);
    CHECK_THROWS_AS(m.append(json{{"no_kind", 1}}), Error);
}

TEST_CASE("manifest writer streams records that load back identically") {
    testutil::TempDir tmp;
    auto path = tmp / "manifest.jsonl";
    ManifestHeader h = header_for_tests();
    {
        ManifestWriter w(path, h);
        w.append(record("score", 0));
        w.append(record("metric", 1));
    }
    Manifest loaded = manifest_load_strict(path);
    CHECK(loaded.records().size() == 2);

    // Streamed bytes match Manifest::save for the same content.
    Manifest m(h);
    m.append(record("score", 0));
    m.append(record("metric", 1));
    auto saved = tmp / "saved.jsonl";
    m.save(saved);
    CHECK(testutil::slurp(path) == testutil::slurp(saved));
}

TEST_CASE("append mode extends an existing manifest") {
    testutil::TempDir tmp;
    auto path = tmp / "manifest.jsonl";
    ManifestHeader h = header_for_tests();
    {
        ManifestWriter w(path, h);
        w.append(record("score", 0));
    }
    {
        ManifestWriter w(path, h, ManifestWriter::append_mode);
        w.append(record("training", 1));
    }
    Manifest loaded = manifest_load_strict(path);
    REQUIRE(loaded.records().size() == 2);
    CHECK(loaded.records()[0]["kind"] == "score");
    CHECK(loaded.records()[1]["kind"] == "training");
}

TEST_CASE("append mode rejects a mismatched header") {
    testutil::TempDir tmp;
    auto path = tmp / "manifest.jsonl";
    { ManifestWriter w(path, header_for_tests()); }

    ManifestHeader other = header_for_tests();
    other.config_digest = "different";
    CHECK_THROWS_WITH_AS(ManifestWriter(path, other, ManifestWriter::append_mode),
                         doctest::Contains("mismatch"), Error);
}
