#include "dalda/cli.hpp"

#include "dalda/ags.hpp"
#include "dalda/hash.hpp"
#include "dalda/metrics.hpp"
#include "dalda/mixing.hpp"
#include "dalda/prompting.hpp"
#include "dalda/rng.hpp"
#include "dalda/scoring.hpp"
#include "dalda/sweeps.hpp"
#include "dalda/util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace dalda::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum LogLevel { log_debug = 0, log_info = 1, log_warn = 2, log_error = 3 };

int g_log_level = log_info;

void set_log_level(const std::string& name) {
    if (name == "debug") g_log_level = log_debug;
    else if (name == "info") g_log_level = log_info;
    else if (name == "warn") g_log_level = log_warn;
    else if (name == "error") g_log_level = log_error;
    else throw Error("unknown log level: " + name);
}

void log(int level, const std::string& msg) {
    if (level >= g_log_level) std::cerr << msg << "\n";
}

std::string slurp_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read file: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string dataset_name_for(const fs::path& data_root) {
    fs::path p = data_root;
    if (p.filename().empty()) p = p.parent_path();
    std::string name = p.filename().string();
    return name.empty() ? "dataset" : name;
}

std::string load_description(const config::RunConfig& cfg) {
    if (!cfg.prompting.dataset_description.empty()) return cfg.prompting.dataset_description;
    if (!cfg.prompting.description_file.empty()) return slurp_file(cfg.prompting.description_file);
    return "";
}

fs::path cache_root_for(const config::RunConfig& cfg) {
    if (!cfg.prompting.cache_dir.empty()) return cfg.prompting.cache_dir;
    return fs::path(cfg.output_root) / "prompt_cache";
}

prompting::PromptRequestTemplate build_template(const config::RunConfig& cfg,
                                               const std::vector<std::string>& class_names,
                                               const std::string& class_name,
                                               const std::string& description) {
    prompting::PromptRequestTemplate t;
    t.dataset_description = description;
    t.class_name = class_name;
    t.all_class_names = class_names;
    return t;
}

// n_per_class comes from the split in play, which for run-all equals
// dataset.n_per_class but for a standalone generate follows the split file.
ags::AgsConfig ags_config_for(const config::RunConfig& cfg, int n_per_class) {
    ags::AgsConfig a;
    a.alpha = cfg.ags.alpha;
    a.min_low = cfg.ags.min_low;
    a.max_low = cfg.ags.max_low;
    a.min_high = cfg.ags.min_high;
    a.max_high = cfg.ags.max_high;
    a.sigma_per_example = cfg.ags.sigma_per_example;
    a.n_examples_per_class = n_per_class;
    return a;
}

generation::PipelineOptions pipeline_options_for(const config::RunConfig& cfg,
                                                 const fs::path& out_dir) {
    generation::PipelineOptions o;
    o.m = cfg.prompting.m;
    o.global_seed = cfg.global_seed;
    o.out_dir = out_dir;
    o.workers = cfg.generation.workers;
    o.guidance_scale = cfg.generation.guidance_scale;
    o.image_size = cfg.generation.image_size;
    o.lambda_policy = generation::lambda_policy_from_string(cfg.generation.lambda_policy);
    o.rs_min = cfg.generation.rs_min;
    o.rs_max = cfg.generation.rs_max;
    o.fixed_lambda = cfg.generation.fixed_lambda;
    return o;
}

json score_record_json(const scoring::ClipScoreRecord& rec, double alpha) {
    return {{"kind", "score"},         {"image_id", rec.image_id},
            {"class_name", rec.class_name}, {"raw_cosine", rec.raw_cosine},
            {"clip_score", rec.clip_score}, {"group", scoring::to_string(rec.group)},
            {"alpha", alpha}};
}

scoring::ClipScoreRecord score_record_from_json(const json& j) {
    scoring::ClipScoreRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.class_name = j.at("class_name").get<std::string>();
    r.raw_cosine = j.at("raw_cosine").get<double>();
    r.clip_score = j.at("clip_score").get<double>();
    r.group = scoring::group_from_string(j.at("group").get<std::string>());
    return r;
}

// Scores images one at a time (sorted by image_id) so only one decoded image
// is resident; equivalent to score_images over the same refs.
std::vector<scoring::ClipScoreRecord> score_catalog(const dataset::Catalog& catalog,
                                                    const config::RunConfig& cfg,
                                                    backends::EmbeddingBackend& embedder,
                                                    bool include_test) {
    std::vector<const dataset::LabeledImage*> entries;
    for (const auto& img : catalog.images)
        if (include_test || img.split == "train") entries.push_back(&img);
    std::sort(entries.begin(), entries.end(),
              [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
    std::vector<scoring::ClipScoreRecord> out;
    out.reserve(entries.size());
    for (const auto* entry : entries) {
        Image img = catalog.load_image(*entry);
        scoring::ClipScoreRecord rec = scoring::clip_score(
            img, entry->class_name, cfg.scoring.template_text, embedder, cfg.ags.alpha);
        rec.image_id = entry->image_id;
        out.push_back(std::move(rec));
    }
    return out;
}

int class_id_of(const dataset::Catalog& catalog, const std::string& class_name) {
    auto it = std::find(catalog.class_names.begin(), catalog.class_names.end(), class_name);
    if (it == catalog.class_names.end()) throw Error("unknown class name: " + class_name);
    return static_cast<int>(it - catalog.class_names.begin());
}

struct Pools {
    std::vector<mixing::PoolItem> real;
    std::vector<mixing::PoolItem> synthetic;
    std::vector<mixing::PoolItem> test;
};

Pools build_pools(const dataset::Catalog& catalog, const dataset::FewShotSplit& split,
                  const dataset::Manifest& manifest) {
    Pools p;
    for (const auto& [cls, ids] : split.selected) {
        for (const auto& id : ids) {
            const dataset::LabeledImage* entry = catalog.find(id);
            if (!entry) throw Error("split references unknown image: " + id);
            p.real.push_back({id, catalog.load_image(*entry), entry->class_id});
        }
    }
    for (const auto& rec : manifest.records_of_kind("generation")) {
        if (rec.value("status", "") != "ok") continue;
        std::string path = rec.at("output_path").get<std::string>();
        p.synthetic.push_back({rec.at("image_id").get<std::string>(), read_ppm_file(path),
                               class_id_of(catalog, rec.at("class_name").get<std::string>())});
    }
    for (const auto* entry : catalog.test_images())
        p.test.push_back({entry->image_id, catalog.load_image(*entry), entry->class_id});
    return p;
}

struct TrialResult {
    json training_record;
    json metric_record;
    mixing::LinearProbe probe;
};

TrialResult run_training_trial(const Pools& pools, const config::RunConfig& cfg, int trial,
                               backends::EmbeddingBackend& embedder) {
    mixing::MixConfig mc;
    mc.synthetic_probability = cfg.mixing.synthetic_probability;
    mc.epochs = cfg.mixing.epochs;
    mc.batch_size = cfg.mixing.batch_size;
    mc.image_size = cfg.mixing.image_size;
    mc.learning_rate = cfg.mixing.learning_rate;
    mc.seed = derive_seed(cfg.global_seed, "train-trial:" + std::to_string(trial));
    mixing::MixedSampler sampler =
        mixing::mixed_sampler(pools.real, pools.synthetic, mc.synthetic_probability, Rng(mc.seed));
    mixing::LinearProbe probe = mixing::train_linear_probe(sampler, embedder, mc);
    double accuracy = mixing::evaluate_accuracy(probe, pools.test, embedder);

    TrialResult out;
    out.training_record = {{"kind", "training"},
                           {"trial", trial},
                           {"seed", mc.seed},
                           {"epochs", mc.epochs},
                           {"batch_size", mc.batch_size},
                           {"learning_rate", mc.learning_rate},
                           {"synthetic_probability", mc.synthetic_probability},
                           {"n_real", pools.real.size()},
                           {"n_synthetic", pools.synthetic.size()}};
    out.metric_record = {{"kind", "metric"},
                         {"name", "accuracy"},
                         {"method", cfg.generation.lambda_policy},
                         {"trial", trial},
                         {"value", accuracy}};
    out.probe = std::move(probe);
    return out;
}

void save_probe(const mixing::LinearProbe& probe, const fs::path& path) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < probe.weights.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < probe.weights.cols(); ++c) row.push_back(probe.weights(r, c));
        rows.push_back(std::move(row));
    }
    json j = {{"class_ids", probe.class_ids}, {"weights", rows}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump() << "\n";
}

std::vector<json> diversity_metric_records(const metrics::DiversityReport& report) {
    std::vector<json> out;
    std::string method = metrics::to_string(report.pairing_mode);
    for (const auto& [cls, d] : report.per_class) {
        out.push_back({{"kind", "metric"}, {"name", "clip_i"}, {"class", cls},
                       {"method", method}, {"value", d.clip_i}});
        if (d.lpips)
            out.push_back({{"kind", "metric"}, {"name", "lpips"}, {"class", cls},
                           {"method", method}, {"value", *d.lpips}});
    }
    if (report.aggregate) {
        out.push_back({{"kind", "metric"}, {"name", "clip_i"}, {"method", method},
                       {"value", report.aggregate->clip_i}});
        if (report.aggregate->lpips)
            out.push_back({{"kind", "metric"}, {"name", "lpips"}, {"method", method},
                           {"value", *report.aggregate->lpips}});
    }
    return out;
}

// --- run-all machinery --------------------------------------------------------

struct RunContext {
    const config::RunConfig& cfg;
    BackendSet& backends;
    fs::path out_root;
    dataset::Catalog catalog;
    std::string cfg_digest;
    std::string source_digest;
    dataset::ManifestHeader header;
    std::unique_ptr<dataset::ManifestWriter> writer;
    dataset::Manifest manifest;
    std::vector<scoring::ClipScoreRecord> scores;
    std::map<std::string, prompting::PromptSet> prompt_sets;
    dataset::FewShotSplit split;

    void commit(const json& rec) {
        writer->append(rec);
        manifest.append(rec);
    }
    fs::path manifest_path() const { return out_root / "run.jsonl"; }
    fs::path split_path() const { return out_root / "split.jsonl"; }
    fs::path stages_path() const { return out_root / "stages.json"; }
};

struct Stage {
    std::string name;
    std::function<void(RunContext&)> run;
    std::function<void(RunContext&)> restore; // throws when outputs are missing
};

void stage_score_run(RunContext& ctx) {
    ctx.scores = score_catalog(ctx.catalog, ctx.cfg, *ctx.backends.embedding, false);
    if (ctx.scores.empty()) throw Error("score: catalog has no train images");
    for (const auto& rec : ctx.scores) ctx.commit(score_record_json(rec, ctx.cfg.ags.alpha));
}

void stage_score_restore(RunContext& ctx) {
    ctx.scores.clear();
    for (const auto& rec : ctx.manifest.records_of_kind("score"))
        ctx.scores.push_back(score_record_from_json(rec));
    if (ctx.scores.empty()) throw Error("score: no records to restore");
}

void stage_prompts_run(RunContext& ctx) {
    std::string description = load_description(ctx.cfg);
    prompting::PromptCache cache(cache_root_for(ctx.cfg),
                                 dataset_name_for(ctx.cfg.dataset.data_root));
    backends::ChatParams params{ctx.cfg.prompting.temperature, ctx.cfg.prompting.top_p,
                                ctx.cfg.prompting.frequency_penalty,
                                ctx.cfg.prompting.presence_penalty};
    std::vector<json> records;
    for (const auto& cls : ctx.catalog.class_names) {
        prompting::PromptRequestTemplate t =
            build_template(ctx.cfg, ctx.catalog.class_names, cls, description);
        prompting::PromptSet set = prompting::generate_prompts(cls, ctx.cfg.prompting.m, t,
                                                               *ctx.backends.chat, cache, params);
        for (std::size_t i = 0; i < set.prompts.size(); ++i)
            records.push_back({{"kind", "prompt"},
                               {"class_name", cls},
                               {"index", i},
                               {"prompt", set.prompts[i]},
                               {"model_id", set.provider.model_id},
                               {"template_hash", set.template_hash},
                               {"created_at", set.created_at}});
        ctx.prompt_sets[cls] = std::move(set);
    }
    // Commit only after every class succeeded so a provider failure leaves
    // the manifest ending at the previous stage.
    for (const auto& rec : records) ctx.commit(rec);
}

void stage_prompts_restore(RunContext& ctx) {
    ctx.prompt_sets.clear();
    for (const auto& rec : ctx.manifest.records_of_kind("prompt")) {
        std::string cls = rec.at("class_name").get<std::string>();
        prompting::PromptSet& set = ctx.prompt_sets[cls];
        set.class_name = cls;
        std::size_t index = rec.at("index").get<std::size_t>();
        if (set.prompts.size() <= index) set.prompts.resize(index + 1);
        set.prompts[index] = rec.at("prompt").get<std::string>();
        set.provider = {backends::BackendDescriptor::Kind::chat,
                        rec.at("model_id").get<std::string>(), std::nullopt, true};
        set.template_hash = rec.at("template_hash").get<std::string>();
        set.created_at = rec.value("created_at", "");
    }
    if (ctx.prompt_sets.empty()) throw Error("prompts: no records to restore");
    for (const auto& [cls, set] : ctx.prompt_sets) {
        if (static_cast<int>(set.prompts.size()) != ctx.cfg.prompting.m)
            throw Error("prompts: restored set for " + cls + " has wrong size");
        for (const auto& p : set.prompts)
            if (p.empty()) throw Error("prompts: restored set for " + cls + " has gaps");
    }
}

void stage_split_run(RunContext& ctx) {
    ctx.split =
        dataset::make_fewshot_split(ctx.catalog, ctx.cfg.dataset.n_per_class, ctx.cfg.global_seed);
    dataset::save_split(ctx.split, ctx.split_path());
}

void stage_split_restore(RunContext& ctx) {
    ctx.split = dataset::load_split(ctx.split_path());
    if (ctx.split.n_per_class != ctx.cfg.dataset.n_per_class ||
        ctx.split.seed != ctx.cfg.global_seed)
        throw Error("split: stored split does not match config");
}

void stage_generate_run(RunContext& ctx) {
    generation::PipelineOptions options =
        pipeline_options_for(ctx.cfg, ctx.out_root / "synthetic");
    generation::PipelineResult result = generation::run_pipeline(
        ctx.catalog, ctx.split, ctx.scores, ctx.prompt_sets,
        ags_config_for(ctx.cfg, ctx.split.n_per_class), *ctx.backends.diffusion, *ctx.writer,
        options);
    // run_pipeline streams records itself; resync the in-memory mirror.
    ctx.manifest = dataset::manifest_load_strict(ctx.manifest_path());
    if (result.failed > 0)
        throw Error("generate: " + std::to_string(result.failed) + " draws failed");
}

void stage_generate_restore(RunContext& ctx) {
    std::size_t ok = 0;
    for (const auto& rec : ctx.manifest.records_of_kind("generation")) {
        if (rec.value("status", "") != "ok") continue;
        ++ok;
        std::string path = rec.at("output_path").get<std::string>();
        if (!fs::exists(path)) throw Error("generate: missing output " + path);
    }
    if (ok == 0) throw Error("generate: no records to restore");
}

void stage_train_run(RunContext& ctx) {
    Pools pools = build_pools(ctx.catalog, ctx.split, ctx.manifest);
    if (pools.test.empty()) throw Error("train: catalog has no test images");
    if (pools.synthetic.empty()) throw Error("train: manifest has no usable synthetic images");
    std::vector<json> records;
    for (int trial = 0; trial < ctx.cfg.mixing.trials; ++trial) {
        TrialResult r = run_training_trial(pools, ctx.cfg, trial, *ctx.backends.embedding);
        records.push_back(std::move(r.training_record));
        records.push_back(std::move(r.metric_record));
    }
    for (const auto& rec : records) ctx.commit(rec);
}

void stage_train_restore(RunContext& ctx) {
    if (ctx.manifest.records_of_kind("training").empty())
        throw Error("train: no records to restore");
}

void stage_evaluate_run(RunContext& ctx) {
    metrics::PairingMode mode = metrics::pairing_mode_from_string(ctx.cfg.metrics.pairing);
    metrics::MockPerceptualBackend mock_perceptual;
    metrics::PerceptualBackend* perceptual =
        ctx.cfg.metrics.lpips_backend == "mock" ? &mock_perceptual : nullptr;
    metrics::DiversityReport report =
        metrics::diversity_report(ctx.manifest, ctx.catalog, *ctx.backends.embedding, perceptual,
                                  mode);
    for (const auto& warning : report.warnings) log(log_warn, "[evaluate] " + warning);
    for (const auto& rec : diversity_metric_records(report)) ctx.commit(rec);
    metrics::emit_report(ctx.manifest, ctx.out_root / "report");
}

void stage_evaluate_restore(RunContext& ctx) {
    if (!fs::exists(ctx.out_root / "report" / "report.txt") ||
        !fs::exists(ctx.out_root / "report" / "plot_data.jsonl"))
        throw Error("evaluate: report files missing");
}

const std::vector<Stage>& stages() {
    static const std::vector<Stage> all = {
        {"score", stage_score_run, stage_score_restore},
        {"prompts", stage_prompts_run, stage_prompts_restore},
        {"split", stage_split_run, stage_split_restore},
        {"generate", stage_generate_run, stage_generate_restore},
        {"train", stage_train_run, stage_train_restore},
        {"evaluate", stage_evaluate_run, stage_evaluate_restore},
    };
    return all;
}

struct StageEntry {
    std::string name;
    std::string digest;
    std::size_t records_end = 0;
};

std::vector<StageEntry> load_stage_entries(const fs::path& path) {
    std::vector<StageEntry> out;
    if (!fs::exists(path)) return out;
    json j = json::parse(slurp_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("schema", "") != "v1") return out;
    if (!j.contains("stages") || !j["stages"].is_array()) return out;
    for (const auto& e : j["stages"]) {
        if (!e.is_object() || !e.contains("name") || !e.contains("digest") ||
            !e.contains("records_end"))
            return out; // damaged state file: rebuild everything
        out.push_back({e["name"].get<std::string>(), e["digest"].get<std::string>(),
                       e["records_end"].get<std::size_t>()});
    }
    return out;
}

void save_stage_entries(const fs::path& path, const std::vector<StageEntry>& entries) {
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back({{"name", e.name}, {"digest", e.digest}, {"records_end", e.records_end}});
    json j = {{"schema", "v1"}, {"stages", arr}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

dataset::Manifest slice_manifest(const dataset::ManifestHeader& header,
                                 const std::vector<json>& records, std::size_t count) {
    dataset::Manifest m(header);
    for (std::size_t i = 0; i < count && i < records.size(); ++i) m.append(records[i]);
    return m;
}

} // namespace

const char* to_string(StageStatus s) {
    switch (s) {
    case StageStatus::ran: return "ran";
    case StageStatus::skipped: return "skipped";
    case StageStatus::failed: return "failed";
    case StageStatus::blocked: return "blocked";
    }
    return "blocked";
}

const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& s : stages()) out.push_back(s.name);
        return out;
    }();
    return names;
}

BackendSet make_backends(const config::RunConfig& cfg) {
    BackendSet set;
    if (cfg.backends.embedding == "mock") {
        set.embedding = std::make_unique<backends::MockEmbeddingBackend>(
            cfg.backends.embedding_dim, 0);
    } else {
        if (cfg.backends.embedding_endpoint.empty())
            throw Error("backends.embedding_endpoint is required for the remote backend");
        set.embedding = std::make_unique<backends::RemoteEmbeddingBackend>(
            cfg.backends.embedding_endpoint, cfg.backends.embedding_model,
            cfg.backends.embedding_dim);
    }
    if (cfg.backends.chat == "mock") {
        set.chat = std::make_unique<backends::MockChatBackend>(0);
    } else {
        if (cfg.backends.chat_endpoint.empty())
            throw Error("backends.chat_endpoint is required for the remote backend");
        set.chat = std::make_unique<backends::RemoteChatBackend>(cfg.backends.chat_endpoint,
                                                                 cfg.backends.chat_model);
    }
    if (cfg.backends.diffusion == "toy") {
        set.diffusion = std::make_unique<generation::ToyDiffusionBackend>();
    } else {
        if (cfg.backends.diffusion_endpoint.empty())
            throw Error("backends.diffusion_endpoint is required for the remote backend");
        set.diffusion = std::make_unique<generation::RemoteDiffusionBackend>(
            cfg.backends.diffusion_endpoint, cfg.backends.diffusion_model);
    }
    return set;
}

std::string data_digest(const dataset::Catalog& catalog) {
    Sha256 h;
    h.part("data-digest-v1");
    for (const auto& img : catalog.images) {
        h.part(img.image_id);
        h.part(slurp_file(catalog.root / img.path));
    }
    return hex_digest(h.finish());
}

RunAllResult run_all(const config::RunConfig& cfg, BackendSet* injected) {
    cfg.validate();
    if (cfg.dataset.data_root.empty()) throw Error("run-all: dataset.data_root is required");

    BackendSet owned;
    if (!injected) owned = make_backends(cfg);
    BackendSet& backend_set = injected ? *injected : owned;

    RunContext ctx{cfg, backend_set};
    ctx.out_root = cfg.output_root;
    fs::create_directories(ctx.out_root);
    prompting::CacheLock lock(ctx.out_root / "run");

    ctx.catalog = dataset::ingest_catalog(cfg.dataset.data_root);
    ctx.cfg_digest = cfg.digest();
    ctx.source_digest = data_digest(ctx.catalog);
    ctx.header = dataset::ManifestHeader{dataset::kToolVersion, cfg.global_seed, ctx.cfg_digest};

    const std::vector<Stage>& all = stages();
    std::vector<std::string> want(all.size());
    std::string chain = sha256_hex("dalda-stages-v1\n" + ctx.cfg_digest + "\n" + ctx.source_digest);
    for (std::size_t i = 0; i < all.size(); ++i) {
        chain = sha256_hex(chain + "\n" + all[i].name);
        want[i] = chain;
    }

    std::vector<StageEntry> previous = load_stage_entries(ctx.stages_path());

    // A usable on-disk manifest must carry the current header; otherwise every
    // stage reruns from scratch.
    std::vector<json> on_disk;
    bool have_manifest = false;
    if (fs::exists(ctx.manifest_path())) {
        try {
            dataset::ManifestLoadResult loaded = dataset::manifest_load(ctx.manifest_path());
            if (loaded.manifest.header().global_seed == cfg.global_seed &&
                loaded.manifest.header().config_digest == ctx.cfg_digest &&
                loaded.manifest.header().tool_version == dataset::kToolVersion) {
                on_disk = loaded.manifest.records();
                have_manifest = true;
            }
        } catch (const std::exception&) {
            have_manifest = false;
        }
    }

    std::size_t skip = 0;
    while (skip < all.size() && skip < previous.size()) {
        const StageEntry& e = previous[skip];
        if (e.name != all[skip].name || e.digest != want[skip]) break;
        if (!have_manifest || on_disk.size() < e.records_end) break;
        ++skip;
    }

    auto boundary_for = [&](std::size_t count) -> std::size_t {
        return count == 0 ? 0 : previous[count - 1].records_end;
    };

    ctx.manifest = slice_manifest(ctx.header, on_disk, boundary_for(skip));
    std::size_t restored = 0;
    while (restored < skip) {
        try {
            all[restored].restore(ctx);
            ++restored;
        } catch (const std::exception& e) {
            log(log_info, std::string("[run-all] ") + all[restored].name +
                              ": outputs missing, rerunning (" + e.what() + ")");
            skip = restored;
            ctx.manifest = slice_manifest(ctx.header, on_disk, boundary_for(skip));
            break;
        }
    }

    RunAllResult result;
    result.manifest_path = ctx.manifest_path();
    std::vector<StageEntry> completed;
    for (std::size_t i = 0; i < skip; ++i) {
        completed.push_back({all[i].name, want[i], ctx.manifest.records().size()});
        result.stages.push_back({all[i].name, StageStatus::skipped, ""});
        log(log_info, "[run-all] " + all[i].name + ": skipped");
    }
    // Fix recorded boundaries for skipped stages to their original values.
    for (std::size_t i = 0; i < skip; ++i) completed[i].records_end = previous[i].records_end;

    if (skip == all.size()) {
        save_stage_entries(ctx.stages_path(), completed);
        result.exit_code = 0;
        return result;
    }

    // Truncate the manifest to the last completed boundary, then append.
    if (skip == 0) {
        ctx.writer = std::make_unique<dataset::ManifestWriter>(ctx.manifest_path(), ctx.header);
        ctx.manifest = dataset::Manifest(ctx.header);
    } else {
        ctx.manifest.save(ctx.manifest_path());
        ctx.writer = std::make_unique<dataset::ManifestWriter>(
            ctx.manifest_path(), ctx.header, dataset::ManifestWriter::append_mode);
    }

    bool failed = false;
    for (std::size_t i = skip; i < all.size(); ++i) {
        if (failed) {
            result.stages.push_back({all[i].name, StageStatus::blocked, ""});
            continue;
        }
        try {
            all[i].run(ctx);
            completed.push_back({all[i].name, want[i], ctx.manifest.records().size()});
            result.stages.push_back({all[i].name, StageStatus::ran, ""});
            log(log_info, "[run-all] " + all[i].name + ": ran");
        } catch (const std::exception& e) {
            failed = true;
            result.stages.push_back({all[i].name, StageStatus::failed, e.what()});
            log(log_error, "[run-all] " + all[i].name + ": failed: " + e.what());
        }
    }

    save_stage_entries(ctx.stages_path(), completed);
    result.exit_code = failed ? 1 : 0;
    return result;
}

// --- subcommands ----------------------------------------------------------

namespace {

dataset::Catalog catalog_for(const config::RunConfig& cfg) {
    if (cfg.dataset.data_root.empty())
        throw Error("no data root given (use --data or dataset.data_root)");
    return dataset::ingest_catalog(cfg.dataset.data_root);
}

int cmd_score(const config::RunConfig& cfg, const fs::path& out_path) {
    dataset::Catalog catalog = catalog_for(cfg);
    BackendSet backends = make_backends(cfg);
    std::vector<scoring::ClipScoreRecord> records =
        score_catalog(catalog, cfg, *backends.embedding, true);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw Error("cannot write " + out_path.string());
    for (const auto& rec : records) out << score_record_json(rec, cfg.ags.alpha).dump() << "\n";
    if (!out) throw Error("write failed for " + out_path.string());

    scoring::ScoreReport report = scoring::score_report(records, cfg.scoring.hc_boundary);
    std::cout << "scored " << records.size() << " images; dataset mean " << report.dataset_mean
              << " (" << (report.dataset_group == scoring::DatasetGroup::HC ? "HC" : "LC") << ")"
              << "\n";
    return 0;
}

int cmd_prompts(const config::RunConfig& cfg) {
    dataset::Catalog catalog = catalog_for(cfg);
    BackendSet backends = make_backends(cfg);
    std::string description = load_description(cfg);
    prompting::PromptCache cache(cache_root_for(cfg), dataset_name_for(cfg.dataset.data_root));
    backends::ChatParams params{cfg.prompting.temperature, cfg.prompting.top_p,
                                cfg.prompting.frequency_penalty, cfg.prompting.presence_penalty};
    for (const auto& cls : catalog.class_names) {
        prompting::PromptRequestTemplate t =
            build_template(cfg, catalog.class_names, cls, description);
        prompting::PromptSet set =
            prompting::generate_prompts(cls, cfg.prompting.m, t, *backends.chat, cache, params);
        for (std::size_t i = 0; i < set.prompts.size(); ++i)
            log(log_info, cls + "[" + std::to_string(i) + "]: " + set.prompts[i]);
    }
    std::cout << "prompt cache: " << cache.root().string() << "\n";
    return 0;
}

int cmd_split(const config::RunConfig& cfg, const fs::path& out_path) {
    dataset::Catalog catalog = catalog_for(cfg);
    dataset::FewShotSplit split =
        dataset::make_fewshot_split(catalog, cfg.dataset.n_per_class, cfg.global_seed);
    dataset::save_split(split, out_path);
    std::cout << "selected " << split.total() << " images (" << cfg.dataset.n_per_class
              << " per class) -> " << out_path.string() << "\n";
    return 0;
}

std::vector<scoring::ClipScoreRecord> load_scores_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read scores file: " + path.string());
    std::vector<scoring::ClipScoreRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw Error(path.string() + ":" + std::to_string(line_no) + ": bad score record");
        out.push_back(score_record_from_json(j));
    }
    if (out.empty()) throw Error("scores file is empty: " + path.string());
    return out;
}

std::map<std::string, prompting::PromptSet> cached_prompt_sets(
    const config::RunConfig& cfg, const dataset::Catalog& catalog, backends::ChatBackend& chat) {
    std::string description = load_description(cfg);
    prompting::PromptCache cache(cache_root_for(cfg), dataset_name_for(cfg.dataset.data_root));
    std::map<std::string, prompting::PromptSet> out;
    std::string model_id = chat.descriptor().model_id;
    for (const auto& cls : catalog.class_names) {
        prompting::PromptRequestTemplate t =
            build_template(cfg, catalog.class_names, cls, description);
        std::string hash = prompting::template_hash(t);
        std::optional<std::vector<std::string>> prompts =
            cache.lookup(cls, hash, model_id, cfg.prompting.m);
        if (!prompts)
            throw Error("no cached prompts for class " + cls + " (run `dalda prompts` first)");
        prompting::PromptSet set;
        set.class_name = cls;
        set.prompts = std::move(*prompts);
        set.provider = chat.descriptor();
        set.template_hash = hash;
        set.created_at = now_iso8601();
        out[cls] = std::move(set);
    }
    return out;
}

int cmd_generate(const config::RunConfig& cfg, const fs::path& split_path,
                 const fs::path& scores_path, const fs::path& out_dir) {
    dataset::Catalog catalog = catalog_for(cfg);
    BackendSet backends = make_backends(cfg);
    dataset::FewShotSplit split = dataset::load_split(split_path);
    std::vector<scoring::ClipScoreRecord> scores = load_scores_file(scores_path);
    std::map<std::string, prompting::PromptSet> prompt_sets =
        cached_prompt_sets(cfg, catalog, *backends.chat);

    fs::create_directories(out_dir);
    dataset::ManifestHeader header{dataset::kToolVersion, cfg.global_seed, cfg.digest()};
    dataset::ManifestWriter writer(out_dir / "manifest.jsonl", header);
    generation::PipelineOptions options = pipeline_options_for(cfg, out_dir / "synthetic");
    generation::PipelineResult result = generation::run_pipeline(
        catalog, split, scores, prompt_sets, ags_config_for(cfg, split.n_per_class),
        *backends.diffusion, writer, options);
    std::cout << "generated " << result.generated << " images, " << result.failed
              << " failed -> " << (out_dir / "manifest.jsonl").string() << "\n";
    return result.failed > 0 ? 1 : 0;
}

int cmd_train(const config::RunConfig& cfg, const fs::path& split_path,
              const fs::path& manifest_path, const fs::path& model_dir) {
    dataset::Catalog catalog = catalog_for(cfg);
    BackendSet backends = make_backends(cfg);
    dataset::FewShotSplit split = dataset::load_split(split_path);
    dataset::Manifest manifest = dataset::manifest_load_strict(manifest_path);
    Pools pools = build_pools(catalog, split, manifest);
    if (pools.test.empty()) throw Error("train: catalog has no test images");
    if (pools.synthetic.empty()) throw Error("train: manifest has no usable synthetic images");

    dataset::ManifestWriter writer(manifest_path, manifest.header(),
                                   dataset::ManifestWriter::append_mode);
    fs::create_directories(model_dir);
    std::vector<double> accuracies;
    for (int trial = 0; trial < cfg.mixing.trials; ++trial) {
        TrialResult r = run_training_trial(pools, cfg, trial, *backends.embedding);
        accuracies.push_back(r.metric_record.at("value").get<double>());
        writer.append(r.training_record);
        writer.append(r.metric_record);
        save_probe(r.probe, model_dir / ("model_trial" + std::to_string(trial) + ".json"));
    }
    metrics::TrialSummary summary = metrics::trial_stats(accuracies);
    std::cout << "accuracy over " << summary.n_trials << " trials: mean " << summary.mean
              << " std " << summary.std_dev << "\n";
    return 0;
}

int cmd_evaluate(const config::RunConfig& cfg, const fs::path& manifest_path,
                 const fs::path& out_dir) {
    dataset::Catalog catalog = catalog_for(cfg);
    BackendSet backends = make_backends(cfg);
    dataset::Manifest manifest = dataset::manifest_load_strict(manifest_path);
    metrics::PairingMode mode = metrics::pairing_mode_from_string(cfg.metrics.pairing);
    metrics::MockPerceptualBackend mock_perceptual;
    metrics::PerceptualBackend* perceptual =
        cfg.metrics.lpips_backend == "mock" ? &mock_perceptual : nullptr;
    metrics::DiversityReport report =
        metrics::diversity_report(manifest, catalog, *backends.embedding, perceptual, mode);
    for (const auto& warning : report.warnings) log(log_warn, "[evaluate] " + warning);

    dataset::ManifestWriter writer(manifest_path, manifest.header(),
                                   dataset::ManifestWriter::append_mode);
    for (const auto& rec : diversity_metric_records(report)) {
        writer.append(rec);
        manifest.append(rec);
    }
    metrics::ReportFiles files = metrics::emit_report(manifest, out_dir);
    std::cout << "report: " << files.table.string() << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& manifest_paths, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    struct Entry {
        std::string name;
        std::vector<double> accuracy;
    };
    std::vector<Entry> entries;
    for (const auto& path : manifest_paths) {
        dataset::Manifest manifest = dataset::manifest_load_strict(path);
        std::string stem = fs::path(path).stem().string();
        metrics::emit_report(manifest, out_dir / stem);
        Entry e{stem, {}};
        for (const auto& rec : manifest.records_of_kind("metric"))
            if (rec.value("name", "") == "accuracy") e.accuracy.push_back(rec.at("value"));
        entries.push_back(std::move(e));
    }
    fs::path cmp_path = out_dir / "compare.txt";
    std::ofstream out(cmp_path, std::ios::trunc);
    if (!out) throw Error("cannot write " + cmp_path.string());
    out << "accuracy by manifest\n";
    for (const auto& e : entries) {
        if (e.accuracy.empty()) {
            out << e.name << ": no accuracy records\n";
            continue;
        }
        metrics::TrialSummary s = metrics::trial_stats(e.accuracy);
        out << e.name << ": n=" << s.n_trials << " mean=" << s.mean << " std=" << s.std_dev
            << "\n";
    }
    if (entries.size() == 2 && entries[0].accuracy.size() >= 2 &&
        entries[1].accuracy.size() >= 2) {
        metrics::TTestResult t = metrics::two_sample_t(entries[0].accuracy, entries[1].accuracy);
        out << "two-sample t: t=" << t.t << " df=" << t.df << " p=" << t.p << "\n";
    }
    std::cout << "comparison: " << cmp_path.string() << "\n";
    return 0;
}

int cmd_run_all(const config::RunConfig& cfg) {
    RunAllResult result = run_all(cfg);
    for (const auto& stage : result.stages) {
        std::cout << stage.name << ": " << to_string(stage.status);
        if (!stage.detail.empty()) std::cout << " (" << stage.detail << ")";
        std::cout << "\n";
    }
    std::cout << "manifest: " << result.manifest_path.string() << "\n";
    return result.exit_code;
}

int cmd_sweep(const config::RunConfig& cfg, const fs::path& spec_path, const fs::path& out_dir) {
    sweeps::SweepSpec spec = sweeps::load_sweep_spec(spec_path);
    sweeps::SweepResult result = sweeps::run_sweep(spec, cfg, out_dir);
    for (const auto& point : result.points) {
        std::cout << "value " << point.value << " trial " << point.trial << ": "
                  << (point.ok ? "ok" : "failed") << "\n";
    }
    std::cout << "plot data: " << result.plot_data.string() << "\n";
    return result.failed_points == 0 ? 0 : 1;
}

} // namespace

int run_main(int argc, const char* const* argv) {
    // Dotted flags (--section.key value) are config overrides; hide them from
    // the option parser and feed them to parse_config in order.
    std::vector<std::string> args;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) == 0) {
            std::string body = arg.substr(2);
            std::size_t eq = body.find('=');
            std::string name = eq == std::string::npos ? body : body.substr(0, eq);
            if (name.find('.') != std::string::npos) {
                if (eq != std::string::npos) {
                    overrides.emplace_back(name, body.substr(eq + 1));
                } else if (i + 1 < argc) {
                    overrides.emplace_back(name, argv[++i]);
                } else {
                    std::cerr << "missing value for --" << name << "\n";
                    return 2;
                }
                continue;
            }
        }
        args.push_back(std::move(arg));
    }

    CLI::App app{"dalda: few-shot augmentation toolkit"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::string log_level = "info";
    std::uint64_t seed_flag = 0;
    app.add_option("--config", config_path, "config file");
    CLI::Option* seed_opt = app.add_option("--seed", seed_flag, "global seed override");
    app.add_option("--log-level", log_level, "debug|info|warn|error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    std::string data_root;

    auto* sc_score = app.add_subcommand("score", "CLIP-score every image in a dataset");
    std::string score_out = "scores.jsonl";
    double alpha_flag = 0.0;
    sc_score->add_option("--data", data_root, "dataset root");
    sc_score->add_option("--out", score_out, "output records file");
    CLI::Option* alpha_opt = sc_score->add_option("--alpha", alpha_flag, "High/Low threshold");

    auto* sc_prompts = app.add_subcommand("prompts", "generate and cache per-class prompts");
    std::string desc_file, provider_flag, cache_flag, model_flag, endpoint_flag;
    int m_flag = 0;
    sc_prompts->add_option("--data", data_root, "dataset root");
    sc_prompts->add_option("--dataset-desc", desc_file, "dataset description file");
    CLI::Option* m_opt = sc_prompts->add_option("--m", m_flag, "prompts per class");
    sc_prompts->add_option("--provider", provider_flag, "mock|remote");
    sc_prompts->add_option("--cache", cache_flag, "prompt cache directory");
    sc_prompts->add_option("--model", model_flag, "chat model id");
    sc_prompts->add_option("--endpoint", endpoint_flag, "chat endpoint URL");

    auto* sc_split = app.add_subcommand("split", "draw a few-shot split");
    std::string split_out = "split.jsonl";
    int n_flag = 0;
    sc_split->add_option("--data", data_root, "dataset root");
    CLI::Option* n_opt = sc_split->add_option("--n", n_flag, "examples per class");
    sc_split->add_option("--out", split_out, "output split file");

    auto* sc_generate = app.add_subcommand("generate", "run the augmentation pipeline");
    std::string gen_split, gen_scores, gen_out, gen_prompts;
    int workers_flag = 0;
    sc_generate->add_option("--data", data_root, "dataset root");
    sc_generate->add_option("--split", gen_split, "split file")->required();
    sc_generate->add_option("--scores", gen_scores, "scores file")->required();
    sc_generate->add_option("--prompts", gen_prompts, "prompt cache directory");
    sc_generate->add_option("--out", gen_out, "output directory");
    CLI::Option* workers_opt = sc_generate->add_option("--workers", workers_flag, "worker count");

    auto* sc_train = app.add_subcommand("train", "train the mixed-data linear probe");
    std::string train_split, train_manifest, train_out = "model";
    double p_flag = 0.0;
    int trials_flag = 0;
    sc_train->add_option("--data", data_root, "dataset root");
    sc_train->add_option("--split", train_split, "split file")->required();
    sc_train->add_option("--manifest", train_manifest, "manifest file")->required();
    CLI::Option* p_opt = sc_train->add_option("--p", p_flag, "synthetic probability");
    CLI::Option* trials_opt = sc_train->add_option("--trials", trials_flag, "trial count");
    sc_train->add_option("--out", train_out, "model output directory");

    auto* sc_evaluate = app.add_subcommand("evaluate", "compute diversity metrics and report");
    std::string eval_manifest, eval_out = "report", mode_flag;
    sc_evaluate->add_option("--data", data_root, "dataset root");
    sc_evaluate->add_option("--manifest", eval_manifest, "manifest file")->required();
    sc_evaluate->add_option("--mode", mode_flag, "synthetic_vs_real|synthetic_vs_synthetic");
    sc_evaluate->add_option("--out", eval_out, "report directory");

    auto* sc_report = app.add_subcommand("report", "render reports for one or more manifests");
    std::vector<std::string> report_manifests;
    std::string report_out = "cmp";
    sc_report->add_option("--manifests", report_manifests, "manifest files")
        ->required()
        ->expected(-1);
    sc_report->add_option("--out", report_out, "output directory");

    auto* sc_run_all = app.add_subcommand("run-all", "run every stage into one output root");
    std::string run_out;
    sc_run_all->add_option("--data", data_root, "dataset root");
    sc_run_all->add_option("--out", run_out, "output root");

    auto* sc_sweep = app.add_subcommand("sweep", "run a sweep specification");
    std::string sweep_spec, sweep_out = "sweeps";
    sc_sweep->add_option("--data", data_root, "dataset root");
    sc_sweep->add_option("--spec", sweep_spec, "sweep spec file")->required();
    sc_sweep->add_option("--out", sweep_out, "sweep output directory");

    std::vector<const char*> cargv;
    cargv.push_back(argc > 0 ? argv[0] : "dalda");
    for (const auto& a : args) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        set_log_level(log_level);
        if (seed_opt->count()) overrides.emplace_back("global_seed", std::to_string(seed_flag));

        std::optional<fs::path> config_file;
        if (!config_path.empty()) config_file = config_path;
        config::RunConfig cfg = config::parse_config(config_file, overrides);
        if (!data_root.empty()) cfg.dataset.data_root = data_root;

        if (sc_score->parsed()) {
            if (alpha_opt->count()) cfg.ags.alpha = alpha_flag;
            cfg.validate();
            return cmd_score(cfg, score_out);
        }
        if (sc_prompts->parsed()) {
            if (!desc_file.empty()) cfg.prompting.description_file = desc_file;
            if (m_opt->count()) cfg.prompting.m = m_flag;
            if (!provider_flag.empty()) cfg.backends.chat = provider_flag;
            if (!cache_flag.empty()) cfg.prompting.cache_dir = cache_flag;
            if (!model_flag.empty()) cfg.backends.chat_model = model_flag;
            if (!endpoint_flag.empty()) cfg.backends.chat_endpoint = endpoint_flag;
            cfg.validate();
            return cmd_prompts(cfg);
        }
        if (sc_split->parsed()) {
            if (n_opt->count()) cfg.dataset.n_per_class = n_flag;
            cfg.validate();
            return cmd_split(cfg, split_out);
        }
        if (sc_generate->parsed()) {
            if (!gen_prompts.empty()) cfg.prompting.cache_dir = gen_prompts;
            if (workers_opt->count()) cfg.generation.workers = workers_flag;
            if (gen_out.empty()) gen_out = (fs::path(cfg.output_root) / "generate").string();
            cfg.validate();
            return cmd_generate(cfg, gen_split, gen_scores, gen_out);
        }
        if (sc_train->parsed()) {
            if (p_opt->count()) cfg.mixing.synthetic_probability = p_flag;
            if (trials_opt->count()) cfg.mixing.trials = trials_flag;
            cfg.validate();
            return cmd_train(cfg, train_split, train_manifest, train_out);
        }
        if (sc_evaluate->parsed()) {
            if (!mode_flag.empty()) cfg.metrics.pairing = mode_flag;
            cfg.validate();
            return cmd_evaluate(cfg, eval_manifest, eval_out);
        }
        if (sc_report->parsed()) return cmd_report(report_manifests, report_out);
        if (sc_run_all->parsed()) {
            if (!run_out.empty()) cfg.output_root = run_out;
            cfg.validate();
            return cmd_run_all(cfg);
        }
        if (sc_sweep->parsed()) {
            cfg.validate();
            return cmd_sweep(cfg, sweep_spec, sweep_out);
        }
        std::cerr << "no subcommand given\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace dalda::cli
