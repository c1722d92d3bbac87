#pragma once

#include "dalda/image.hpp"
#include "dalda/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dalda::dataset {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestSchema = "v1";

struct LabeledImage {
    std::string image_id; // relative path from the catalog root
    std::string path;     // same as image_id today; kept separate for remapping
    int class_id = 0;
    std::string class_name;
    std::string split; // "train" | "test"
};

// Folder-per-class layout: root/<class>/{train,test}/*.ppm, with images placed
// directly under root/<class>/ treated as train.
struct Catalog {
    std::filesystem::path root;
    std::vector<LabeledImage> images;     // ordered by (class_name, image_id)
    std::vector<std::string> class_names; // sorted; index == class_id
    int skipped_files = 0;                // unreadable entries, warned on stderr

    const LabeledImage* find(const std::string& image_id) const;
    Image load_image(const LabeledImage& entry) const;
    std::vector<const LabeledImage*> train_images() const;
    std::vector<const LabeledImage*> test_images() const;
};

Catalog ingest_catalog(const std::filesystem::path& root);

struct FewShotSplit {
    int n_per_class = 1;
    std::uint64_t seed = 0;
    // class name -> selected train image_ids, in draw order
    std::map<std::string, std::vector<std::string>> selected;

    std::size_t total() const;
};

FewShotSplit make_fewshot_split(const Catalog& catalog, int n_per_class, std::uint64_t seed);

void save_split(const FewShotSplit& split, const std::filesystem::path& path);
FewShotSplit load_split(const std::filesystem::path& path);

struct ManifestHeader {
    std::string tool_version = kToolVersion;
    std::uint64_t global_seed = 0;
    std::string config_digest;

    nlohmann::json to_json() const;
    static ManifestHeader from_json(const nlohmann::json& j);
};

struct ManifestLoadResult;
ManifestLoadResult manifest_load(const std::filesystem::path& path);

// Append-only, line-delimited record log. Every line is a JSON object with a
// "kind" tag; the first line is the header. Key order is canonical
// (lexicographic), so load -> serialize round-trips byte for byte.
class Manifest {
  public:
    Manifest() = default;
    explicit Manifest(ManifestHeader header) : header_(std::move(header)) {}

    const ManifestHeader& header() const { return header_; }
    const std::vector<nlohmann::json>& records() const { return records_; }
    std::vector<nlohmann::json> records_of_kind(const std::string& kind) const;

    void append(nlohmann::json record); // validates the kind tag

    std::string serialize() const;
    void save(const std::filesystem::path& path) const;

  private:
    ManifestHeader header_;
    std::vector<nlohmann::json> records_;

    friend struct ManifestLoadResult;
    friend ManifestLoadResult manifest_load(const std::filesystem::path& path);
};

struct ManifestLoadResult {
    Manifest manifest;           // header plus every record before the damage
    std::optional<std::string> error; // set when a line failed to parse
    std::size_t error_line = 0;       // 1-based line number of the damage
};

// manifest_load (declared above Manifest) throws on a missing/invalid header;
// damaged records are recovered into the result with the error describing the
// first bad line.

// Convenience wrapper that also throws when any record line is damaged.
Manifest manifest_load_strict(const std::filesystem::path& path);

// Streaming single-writer append channel; one flushed line per record.
class ManifestWriter {
  public:
    // Truncates `path` and writes a fresh header line.
    ManifestWriter(std::filesystem::path path, const ManifestHeader& header);

    // Reopens an existing manifest for further appends. The header already on
    // disk must match `header` (schema, seed, config digest) or this throws.
    struct append_mode_t {};
    static constexpr append_mode_t append_mode{};
    ManifestWriter(std::filesystem::path path, const ManifestHeader& header, append_mode_t);

    void append(const nlohmann::json& record);
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

bool valid_record_kind(const std::string& kind);

} // namespace dalda::dataset
