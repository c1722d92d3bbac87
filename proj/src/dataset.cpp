#include "dalda/dataset.hpp"

#include "dalda/errors.hpp"
#include "dalda/hash.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>

namespace dalda::dataset {

using nlohmann::json;

const LabeledImage* Catalog::find(const std::string& image_id) const {
    for (const auto& img : images)
        if (img.image_id == image_id) return &img;
    return nullptr;
}

Image Catalog::load_image(const LabeledImage& entry) const {
    return read_ppm_file(root / entry.path);
}

std::vector<const LabeledImage*> Catalog::train_images() const {
    std::vector<const LabeledImage*> out;
    for (const auto& img : images)
        if (img.split == "train") out.push_back(&img);
    return out;
}

std::vector<const LabeledImage*> Catalog::test_images() const {
    std::vector<const LabeledImage*> out;
    for (const auto& img : images)
        if (img.split == "test") out.push_back(&img);
    return out;
}

namespace {

bool is_hidden(const std::filesystem::path& p) {
    std::string name = p.filename().string();
    return !name.empty() && name.front() == '.';
}

} // namespace

Catalog ingest_catalog(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root))
        throw Error("catalog root is not a directory: " + root.string());

    Catalog cat;
    cat.root = root;

    std::set<std::string> class_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory() && !is_hidden(entry.path()))
            class_dirs.insert(entry.path().filename().string());
    }
    if (class_dirs.empty()) throw Error("empty catalog: no class folders under " + root.string());

    cat.class_names.assign(class_dirs.begin(), class_dirs.end()); // sorted by set order
    for (std::size_t class_id = 0; class_id < cat.class_names.size(); ++class_id) {
        const std::string& cls = cat.class_names[class_id];
        std::vector<LabeledImage> found;

        auto scan = [&](const std::filesystem::path& dir, const std::string& split) {
            if (!std::filesystem::is_directory(dir)) return;
            for (const auto& entry : std::filesystem::directory_iterator(dir)) {
                if (!entry.is_regular_file() || is_hidden(entry.path())) continue;
                std::filesystem::path rel = std::filesystem::relative(entry.path(), root);
                try {
                    read_ppm_file(entry.path());
                } catch (const std::exception& e) {
                    std::cerr << "warning: skipping unreadable image " << rel.string() << ": "
                              << e.what() << "\n";
                    cat.skipped_files++;
                    continue;
                }
                LabeledImage img;
                img.image_id = rel.generic_string();
                img.path = img.image_id;
                img.class_id = static_cast<int>(class_id);
                img.class_name = cls;
                img.split = split;
                found.push_back(std::move(img));
            }
        };

        scan(root / cls, "train"); // loose files count as train
        scan(root / cls / "train", "train");
        scan(root / cls / "test", "test");

        bool has_any = !found.empty();
        if (!has_any) throw Error("class \"" + cls + "\" has no readable images");

        std::sort(found.begin(), found.end(),
                  [](const LabeledImage& a, const LabeledImage& b) { return a.image_id < b.image_id; });
        for (auto& img : found) cat.images.push_back(std::move(img));
    }
    return cat;
}

std::size_t FewShotSplit::total() const {
    std::size_t n = 0;
    for (const auto& [cls, ids] : selected) n += ids.size();
    return n;
}

FewShotSplit make_fewshot_split(const Catalog& catalog, int n_per_class, std::uint64_t seed) {
    if (n_per_class < 1) throw Error("few-shot split: n_per_class must be >= 1");

    std::map<std::string, std::vector<std::string>> train_by_class;
    for (const auto& img : catalog.images)
        if (img.split == "train") train_by_class[img.class_name].push_back(img.image_id);

    FewShotSplit split;
    split.n_per_class = n_per_class;
    split.seed = seed;
    for (const auto& cls : catalog.class_names) {
        auto it = train_by_class.find(cls);
        std::size_t have = it == train_by_class.end() ? 0 : it->second.size();
        if (have < static_cast<std::size_t>(n_per_class))
            throw Error("class \"" + cls + "\" has " + std::to_string(have) +
                        " train images, fewer than n_per_class=" + std::to_string(n_per_class));
        std::vector<std::string> pool = it->second; // already catalog-ordered
        Rng rng(derive_seed(seed, "split:" + cls));
        rng.shuffle(pool);
        pool.resize(static_cast<std::size_t>(n_per_class));
        split.selected[cls] = std::move(pool);
    }
    return split;
}

void save_split(const FewShotSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write split file: " + path.string());
    json header = {{"kind", "split_header"},
                   {"schema", kManifestSchema},
                   {"n_per_class", split.n_per_class},
                   {"seed", split.seed}};
    out << header.dump() << "\n";
    for (const auto& [cls, ids] : split.selected)
        for (const auto& id : ids)
            out << json{{"kind", "split_item"}, {"class_name", cls}, {"image_id", id}}.dump()
                << "\n";
    if (!out) throw Error("write failed for split file: " + path.string());
}

FewShotSplit load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read split file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("split file is empty: " + path.string());
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("kind", "") != "split_header")
        throw Error("split file missing header: " + path.string());
    if (header.value("schema", "") != kManifestSchema)
        throw Error("split file schema mismatch: " + path.string());

    FewShotSplit split;
    split.n_per_class = header.at("n_per_class").get<int>();
    split.seed = header.at("seed").get<std::uint64_t>();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json item = json::parse(line, nullptr, false);
        if (item.is_discarded() || item.value("kind", "") != "split_item")
            throw Error("bad split record at line " + std::to_string(line_no) + " in " +
                        path.string());
        split.selected[item.at("class_name").get<std::string>()].push_back(
            item.at("image_id").get<std::string>());
    }
    return split;
}

json ManifestHeader::to_json() const {
    return {{"kind", "header"},
            {"schema", kManifestSchema},
            {"tool_version", tool_version},
            {"global_seed", global_seed},
            {"config_digest", config_digest}};
}

ManifestHeader ManifestHeader::from_json(const json& j) {
    if (j.value("kind", "") != "header") throw Error("manifest: first record is not a header");
    if (j.value("schema", "") != kManifestSchema)
        throw Error("manifest: schema version mismatch, expected " +
                    std::string(kManifestSchema) + " got " + j.value("schema", "<missing>"));
    ManifestHeader h;
    h.tool_version = j.at("tool_version").get<std::string>();
    h.global_seed = j.at("global_seed").get<std::uint64_t>();
    h.config_digest = j.at("config_digest").get<std::string>();
    return h;
}

bool valid_record_kind(const std::string& kind) {
    return kind == "score" || kind == "prompt" || kind == "generation" || kind == "training" ||
           kind == "metric";
}

std::vector<json> Manifest::records_of_kind(const std::string& kind) const {
    std::vector<json> out;
    for (const auto& r : records_)
        if (r.value("kind", "") == kind) out.push_back(r);
    return out;
}

void Manifest::append(json record) {
    std::string kind = record.value("kind", "");
    if (!valid_record_kind(kind)) throw Error("manifest: unknown record kind \"" + kind + "\"");
    records_.push_back(std::move(record));
}

std::string Manifest::serialize() const {
    std::string out = header_.to_json().dump();
    out += "\n";
    for (const auto& r : records_) {
        out += r.dump();
        out += "\n";
    }
    return out;
}

void Manifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path.string());
    out << serialize();
    if (!out) throw Error("write failed for manifest: " + path.string());
}

ManifestLoadResult manifest_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw Error("manifest missing header: " + path.string());
    json hj = json::parse(line, nullptr, false);
    if (hj.is_discarded()) throw Error("manifest header is not valid JSON: " + path.string());

    ManifestLoadResult result;
    result.manifest.header_ = ManifestHeader::from_json(hj);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        std::string kind = rec.is_discarded() ? "" : rec.value("kind", "");
        if (rec.is_discarded() || !valid_record_kind(kind)) {
            result.error = "manifest: corrupt record at line " + std::to_string(line_no) +
                           " in " + path.string();
            result.error_line = line_no;
            break;
        }
        result.manifest.records_.push_back(std::move(rec));
    }
    return result;
}

Manifest manifest_load_strict(const std::filesystem::path& path) {
    ManifestLoadResult res = manifest_load(path);
    if (res.error) throw Error(*res.error);
    return std::move(res.manifest);
}

ManifestWriter::ManifestWriter(std::filesystem::path path, const ManifestHeader& header)
    : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw Error("cannot open manifest for writing: " + path_.string());
    out << header.to_json().dump() << "\n";
    if (!out) throw Error("write failed for manifest: " + path_.string());
}

ManifestWriter::ManifestWriter(std::filesystem::path path, const ManifestHeader& header,
                               append_mode_t)
    : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) throw Error("cannot reopen manifest: " + path_.string());
    std::string first;
    if (!std::getline(in, first)) throw Error("manifest is empty: " + path_.string());
    json parsed = json::parse(first, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object())
        throw Error("manifest header is not valid JSON: " + path_.string());
    ManifestHeader existing = ManifestHeader::from_json(parsed); // validates schema
    if (existing.global_seed != header.global_seed ||
        existing.config_digest != header.config_digest)
        throw Error("manifest header mismatch on reopen: " + path_.string());
}

void ManifestWriter::append(const json& record) {
    std::string kind = record.value("kind", "");
    if (!valid_record_kind(kind)) throw Error("manifest: unknown record kind \"" + kind + "\"");
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to manifest: " + path_.string());
    out << record.dump() << "\n";
    out.flush();
    if (!out) throw Error("append failed for manifest: " + path_.string());
}

} // namespace dalda::dataset
