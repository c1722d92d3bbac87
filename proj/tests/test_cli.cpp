#include "dalda/cli.hpp"

#include "dalda/backends.hpp"
#include "dalda/dataset.hpp"
#include "dalda/errors.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace dalda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = fs::path(DALDA_FIXTURE_DIR) / "pets2";

config::RunConfig fixture_config(const fs::path& out_root,
                                 std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::pair<std::string, std::string>> overrides = {
        {"dataset.data_root", kFixture.string()},
        {"output_root", out_root.string()},
        {"prompting.m", "4"},
        {"mixing.epochs", "10"},
        {"mixing.trials", "2"},
        {"generation.image_size", "64"},
    };
    overrides.insert(overrides.end(), extra.begin(), extra.end());
    return config::parse_config(std::nullopt, overrides);
}

std::vector<json> masked_records(const fs::path& manifest) {
    auto records = dataset::manifest_load_strict(manifest).records();
    for (auto& r : records) {
        r.erase("wall_time_ms");
        r.erase("created_at");
    }
    return records;
}

std::map<std::string, cli::StageStatus> statuses(const cli::RunAllResult& result) {
    std::map<std::string, cli::StageStatus> out;
    for (const auto& s : result.stages) out[s.name] = s.status;
    return out;
}

class DownChat : public backends::ChatBackend {
  public:
    std::string complete(const std::vector<backends::ChatMessage>&,
                         const backends::ChatParams&) override {
        throw BackendError(BackendError::Kind::unreachable, "chat provider down");
    }
    backends::BackendDescriptor descriptor() const override {
        return {backends::BackendDescriptor::Kind::chat, "down-chat", std::nullopt, false};
    }
};

class DoomedDiffusion : public generation::DiffusionBackend {
  public:
    explicit DoomedDiffusion(std::string fail_id) : fail_id_(std::move(fail_id)) {}
    Image generate(const Image& source, const generation::GenerationRequest& request) override {
        if (request.source_image_id == fail_id_)
            throw BackendError(BackendError::Kind::malformed, "diffusion rejected input");
        return inner_.generate(source, request);
    }
    backends::BackendDescriptor descriptor() const override { return inner_.descriptor(); }

  private:
    std::string fail_id_;
    generation::ToyDiffusionBackend inner_;
};

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("dalda");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_main(static_cast<int>(argv.size()), argv.data());
}

} // namespace

TEST_CASE("stage order matches the pipeline") {
    CHECK(cli::stage_order() == std::vector<std::string>{"score", "prompts", "split", "generate",
                                                         "train", "evaluate"});
}

TEST_CASE("default backends are the hermetic mocks") {
    config::RunConfig cfg = config::parse_config(std::nullopt);
    cli::BackendSet set = cli::make_backends(cfg);
    REQUIRE(set.embedding);
    REQUIRE(set.chat);
    REQUIRE(set.diffusion);
    CHECK(set.embedding->descriptor().deterministic);
    CHECK(set.chat->descriptor().deterministic);
    CHECK(set.diffusion->descriptor().deterministic);
    CHECK(set.embedding->dim() == cfg.backends.embedding_dim);
}

TEST_CASE("data_digest tracks image bytes and ids") {
    testutil::TempDir tmp;
    testutil::make_catalog(tmp / "data", 2, 2, 0, 8);
    dataset::Catalog a = dataset::ingest_catalog(tmp / "data");
    std::string d1 = cli::data_digest(a);
    CHECK(d1 == cli::data_digest(a)); // pure

    // Flip one pixel in place: same ids, different bytes.
    const auto& victim = a.images.front();
    Image img = a.load_image(victim);
    img.at(0, 0, 0) ^= 0x01;
    write_ppm_file((fs::path(a.root) / victim.path).string(), img);
    dataset::Catalog b = dataset::ingest_catalog(tmp / "data");
    CHECK(cli::data_digest(b) != d1);

    // Adding an image changes it too.
    testutil::write_class_images(tmp / "data", "class_00", 3, 0, 60, 70, 80);
    dataset::Catalog c = dataset::ingest_catalog(tmp / "data");
    CHECK(cli::data_digest(c) != cli::data_digest(b));
}

TEST_CASE("run_all walks every stage on the bundled fixture") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    cli::RunAllResult result = cli::run_all(cfg);
    CHECK(result.exit_code == 0);
    auto st = statuses(result);
    for (const auto& name : cli::stage_order()) CHECK(st.at(name) == cli::StageStatus::ran);

    dataset::Manifest m = dataset::manifest_load_strict(result.manifest_path);
    CHECK(m.records_of_kind("score").size() == 6);       // 2 classes x 3 train images
    CHECK(m.records_of_kind("prompt").size() == 8);      // 2 classes x m=4
    CHECK(m.records_of_kind("generation").size() == 8);  // 2 examples x m=4
    CHECK(m.records_of_kind("training").size() == 2);    // trials=2
    CHECK_FALSE(m.records_of_kind("metric").empty());

    for (const auto& rec : m.records_of_kind("generation")) {
        CHECK(rec["status"] == "ok");
        CHECK(fs::exists(rec["output_path"].get<std::string>()));
    }
    CHECK(fs::exists(tmp / "out" / "report" / "report.txt"));
    CHECK(fs::exists(tmp / "out" / "report" / "plot_data.jsonl"));
    CHECK(fs::exists(tmp / "out" / "stages.json"));
}

TEST_CASE("an unchanged rerun skips every stage and leaves the manifest bytes alone") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    cli::RunAllResult first = cli::run_all(cfg);
    REQUIRE(first.exit_code == 0);
    std::string before = testutil::slurp(first.manifest_path);

    cli::RunAllResult second = cli::run_all(cfg);
    CHECK(second.exit_code == 0);
    auto st = statuses(second);
    for (const auto& name : cli::stage_order()) CHECK(st.at(name) == cli::StageStatus::skipped);
    CHECK(testutil::slurp(second.manifest_path) == before);
}

TEST_CASE("a dead chat provider halts the run after scoring") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    cli::BackendSet set = cli::make_backends(cfg);
    set.chat = std::make_unique<DownChat>();
    cli::RunAllResult result = cli::run_all(cfg, &set);
    CHECK(result.exit_code != 0);

    auto st = statuses(result);
    CHECK(st.at("score") == cli::StageStatus::ran);
    CHECK(st.at("prompts") == cli::StageStatus::failed);
    CHECK(st.at("split") == cli::StageStatus::blocked);
    CHECK(st.at("generate") == cli::StageStatus::blocked);
    CHECK(st.at("train") == cli::StageStatus::blocked);
    CHECK(st.at("evaluate") == cli::StageStatus::blocked);

    // The persisted manifest ends at the scoring records.
    dataset::Manifest m = dataset::manifest_load_strict(result.manifest_path);
    CHECK(m.records().size() == 6);
    for (const auto& rec : m.records()) CHECK(rec["kind"] == "score");
}

TEST_CASE("the run resumes cleanly after a provider recovers") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    cli::BackendSet broken = cli::make_backends(cfg);
    broken.chat = std::make_unique<DownChat>();
    REQUIRE(cli::run_all(cfg, &broken).exit_code != 0);

    cli::RunAllResult result = cli::run_all(cfg); // healthy backends
    CHECK(result.exit_code == 0);
    auto st = statuses(result);
    CHECK(st.at("score") == cli::StageStatus::skipped);
    CHECK(st.at("prompts") == cli::StageStatus::ran);
    CHECK(st.at("evaluate") == cli::StageStatus::ran);
}

TEST_CASE("deleting a synthetic image re-runs generation to the same records") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    cli::RunAllResult first = cli::run_all(cfg);
    REQUIRE(first.exit_code == 0);
    auto before = masked_records(first.manifest_path);

    auto gens = dataset::manifest_load_strict(first.manifest_path).records_of_kind("generation");
    REQUIRE_FALSE(gens.empty());
    fs::remove(gens.front()["output_path"].get<std::string>());

    cli::RunAllResult second = cli::run_all(cfg);
    CHECK(second.exit_code == 0);
    auto st = statuses(second);
    CHECK(st.at("score") == cli::StageStatus::skipped);
    CHECK(st.at("prompts") == cli::StageStatus::skipped);
    CHECK(st.at("split") == cli::StageStatus::skipped);
    CHECK(st.at("generate") == cli::StageStatus::ran);
    CHECK(st.at("train") == cli::StageStatus::ran);
    CHECK(st.at("evaluate") == cli::StageStatus::ran);
    CHECK(masked_records(second.manifest_path) == before);
}

TEST_CASE("a config change invalidates the stage cache") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");
    REQUIRE(cli::run_all(cfg).exit_code == 0);

    config::RunConfig changed = fixture_config(tmp / "out", {{"ags.alpha", "0.31"}});
    cli::RunAllResult result = cli::run_all(changed);
    CHECK(result.exit_code == 0);
    auto st = statuses(result);
    for (const auto& name : cli::stage_order()) CHECK(st.at(name) == cli::StageStatus::ran);
}

TEST_CASE("partial generation failure fails the stage but keeps its records") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out");

    dataset::Catalog catalog = dataset::ingest_catalog(kFixture);
    dataset::FewShotSplit split = dataset::make_fewshot_split(catalog, 1, cfg.global_seed);
    std::string doomed = split.selected.begin()->second.front();

    cli::BackendSet set = cli::make_backends(cfg);
    set.diffusion = std::make_unique<DoomedDiffusion>(doomed);
    cli::RunAllResult result = cli::run_all(cfg, &set);
    CHECK(result.exit_code != 0);

    auto st = statuses(result);
    CHECK(st.at("generate") == cli::StageStatus::failed);
    CHECK(st.at("train") == cli::StageStatus::blocked);

    dataset::Manifest m = dataset::manifest_load_strict(result.manifest_path);
    auto gens = m.records_of_kind("generation");
    CHECK(gens.size() == 8); // all draws recorded, failed ones included
    int failed = 0;
    for (const auto& rec : gens)
        if (rec["status"] == "failed") ++failed;
    CHECK(failed == 4);
}

TEST_CASE("the split honours the configured shot count") {
    testutil::TempDir tmp;
    config::RunConfig cfg = fixture_config(tmp / "out", {{"dataset.n_per_class", "2"}});
    cli::RunAllResult result = cli::run_all(cfg);
    REQUIRE(result.exit_code == 0);

    dataset::Manifest m = dataset::manifest_load_strict(result.manifest_path);
    CHECK(m.records_of_kind("generation").size() == 16); // 2 classes x 2 shots x m=4
    dataset::FewShotSplit split = dataset::load_split(tmp / "out" / "split.jsonl");
    CHECK(split.n_per_class == 2);
    CHECK(split.total() == 4);
}

TEST_CASE("score subcommand writes one record per image") {
    testutil::TempDir tmp;
    auto out = tmp / "scores.jsonl";
    int rc = run_cli({"score", "--data", kFixture.string(), "--out", out.string()});
    CHECK(rc == 0);

    std::ifstream in(out);
    REQUIRE(in.good());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        CHECK(rec["kind"] == "score");
        CHECK(rec["clip_score"].get<double>() >= 0.0);
        CHECK(rec["clip_score"].get<double>() <= 1.0);
        ++lines;
    }
    CHECK(lines == 10);
}

TEST_CASE("split subcommand honours dotted overrides") {
    testutil::TempDir tmp;
    auto out = tmp / "split.jsonl";
    int rc = run_cli({"split", "--data", kFixture.string(), "--n", "2", "--seed", "9", "--out",
                      out.string()});
    CHECK(rc == 0);
    dataset::FewShotSplit split = dataset::load_split(out);
    CHECK(split.n_per_class == 2);
    CHECK(split.seed == 9);

    // The same split via a dotted flag instead of the dedicated one.
    auto out2 = tmp / "split2.jsonl";
    rc = run_cli({"split", "--data", kFixture.string(), "--dataset.n_per_class", "2", "--seed",
                  "9", "--out", out2.string()});
    CHECK(rc == 0);
    CHECK(dataset::load_split(out2).selected == split.selected);
}

TEST_CASE("cli errors exit nonzero") {
    CHECK(run_cli({"no-such-command"}) != 0);
    CHECK(run_cli({"sweep"}) != 0);                                  // missing --spec
    CHECK(run_cli({"score", "--data", "/does/not/exist"}) != 0);     // bad data root
    CHECK(run_cli({"score", "--data", kFixture.string(), "--ags.alhpa", "0.2"}) != 0);
}

TEST_CASE("run-all subcommand mirrors the library entry point") {
    testutil::TempDir tmp;
    int rc = run_cli({"run-all", "--data", kFixture.string(), "--out", (tmp / "out").string(),
                      "--prompting.m", "3", "--mixing.trials", "1", "--mixing.epochs", "5"});
    CHECK(rc == 0);
    CHECK(fs::exists(tmp / "out" / "run.jsonl"));
    dataset::Manifest m = dataset::manifest_load_strict(tmp / "out" / "run.jsonl");
    CHECK(m.records_of_kind("generation").size() == 6); // 2 classes x m=3
}
