#pragma once

#include "dalda/backends.hpp"
#include "dalda/config.hpp"
#include "dalda/dataset.hpp"
#include "dalda/generation.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dalda::cli {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Backends resolved from the config tree; owned as a unit so injected test
// doubles can replace any subset.
struct BackendSet {
    std::unique_ptr<backends::EmbeddingBackend> embedding;
    std::unique_ptr<backends::ChatBackend> chat;
    std::unique_ptr<generation::DiffusionBackend> diffusion;
};

BackendSet make_backends(const config::RunConfig& cfg);

enum class StageStatus { ran, skipped, failed, blocked };

const char* to_string(StageStatus s);

struct StageOutcome {
    std::string name;
    StageStatus status = StageStatus::blocked;
    std::string detail; // error text when failed
};

struct RunAllResult {
    int exit_code = 0;
    std::vector<StageOutcome> stages;
    std::filesystem::path manifest_path;
};

// Stage names in execution order.
const std::vector<std::string>& stage_order();

// sha256 over image ids and file bytes in catalog order; any change to the
// source data invalidates every stage.
std::string data_digest(const dataset::Catalog& catalog);

// Executes score -> prompts -> split -> generate -> train -> evaluate into
// cfg.output_root behind an exclusive lock. A stage is skipped when its
// recorded digest (config + data + position) matches and its outputs are
// still present; the first stage that must run truncates the manifest back
// to the previous stage boundary. A failing stage halts everything after it
// and leaves the partial manifest in place. Exit code 0 iff every stage ran
// or skipped cleanly.
RunAllResult run_all(const config::RunConfig& cfg, BackendSet* injected = nullptr);

// Full command-line entry point (subcommands score, prompts, split, generate,
// train, evaluate, report, run-all, sweep).
int run_main(int argc, const char* const* argv);

} // namespace dalda::cli
