#include "dalda/prompting.hpp"

#include "dalda/errors.hpp"
#include "dalda/hash.hpp"
#include "dalda/util.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace dalda::prompting {

using nlohmann::json;

const char* const kRequestWordingVersion = "prompt-wording-v1";

namespace {
constexpr std::size_t kMaxPromptChars = 300;
} // namespace

void PromptRequestTemplate::validate() const {
    if (std::find(all_class_names.begin(), all_class_names.end(), class_name) ==
        all_class_names.end())
        throw Error("prompt template: class \"" + class_name + "\" not in class list");
    if (index < 0) throw Error("prompt template: negative index");
}

std::string template_hash(const PromptRequestTemplate& t) {
    Sha256 h;
    h.part(kRequestWordingVersion);
    h.part(t.dataset_description);
    h.part(t.class_name);
    h.part_u64(t.all_class_names.size());
    for (const auto& c : t.all_class_names) h.part(c);
    h.part(t.diversity_instructions);
    return hex_digest(h.finish());
}

std::vector<backends::ChatMessage> build_llm_request(const PromptRequestTemplate& t,
                                                     int attempt) {
    t.validate();
    std::ostringstream sys;
    sys << "You write prompts for a text-to-image generator.\n";
    sys << "Dataset description: " << t.dataset_description << "\n";
    sys << "The dataset contains these classes: ";
    for (std::size_t i = 0; i < t.all_class_names.size(); ++i) {
        if (i) sys << ", ";
        sys << t.all_class_names[i];
    }
    sys << ".\n";
    sys << t.diversity_instructions << "\n";
    sys << "Respond with exactly one sentence of at most " << kMaxPromptChars
        << " characters and nothing else.\n";
    std::vector<std::string> others;
    for (const auto& c : t.all_class_names)
        if (c != t.class_name) others.push_back(c);
    if (!others.empty()) {
        sys << "Do not mention any class other than the target class. "
            << "Classes to avoid: ";
        for (std::size_t i = 0; i < others.size(); ++i) {
            if (i) sys << ", ";
            sys << others[i];
        }
        sys << ".\n";
    }

    std::ostringstream user;
    user << "Target class: \"" << t.class_name << "\". Prompt index: " << t.index << ".";
    if (attempt > 0) user << " Retry attempt: " << attempt << ".";

    return {{"system", sys.str()}, {"user", user.str()}};
}

namespace {

// Words after folding case and treating '-', '_' as spaces.
std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char raw : text) {
        auto c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool matches_at(const std::vector<std::string>& words, std::size_t pos,
                const std::vector<std::string>& name) {
    if (pos + name.size() > words.size()) return false;
    for (std::size_t i = 0; i < name.size(); ++i)
        if (words[pos + i] != name[i]) return false;
    return true;
}

} // namespace

PromptValidation validate_prompt(const std::string& prompt, const std::string& class_name,
                                 const std::vector<std::string>& all_class_names) {
    if (trim(prompt).empty()) return {false, "empty prompt"};
    if (prompt.size() > kMaxPromptChars)
        return {false, "prompt exceeds " + std::to_string(kMaxPromptChars) + " characters"};

    std::vector<std::string> words = word_tokens(prompt);
    std::vector<std::string> target = word_tokens(class_name);

    struct NamedTokens {
        const std::string* original;
        std::vector<std::string> tokens;
        bool is_target;
    };
    std::vector<NamedTokens> names;
    for (const auto& c : all_class_names) {
        std::vector<std::string> toks = word_tokens(c);
        if (toks.empty()) continue;
        bool is_target = toks == target;
        names.push_back({&c, std::move(toks), is_target});
    }

    // Greedy left-to-right scan; at each position the longest matching class
    // name claims the span, so "persian cat" beats a foreign "cat" inside it.
    std::size_t i = 0;
    while (i < words.size()) {
        const NamedTokens* best = nullptr;
        for (const auto& n : names) {
            if (!matches_at(words, i, n.tokens)) continue;
            if (!best || n.tokens.size() > best->tokens.size() ||
                (n.tokens.size() == best->tokens.size() && n.is_target && !best->is_target))
                best = &n;
        }
        if (best) {
            if (!best->is_target)
                return {false, "mentions other class \"" + *best->original + "\""};
            i += best->tokens.size();
        } else {
            ++i;
        }
    }
    return {true, ""};
}

PromptCache::PromptCache(std::filesystem::path root, std::string dataset_name)
    : root_(std::move(root)), dataset_(std::move(dataset_name)) {
    if (dataset_.empty()) throw Error("prompt cache: empty dataset name");
}

std::filesystem::path PromptCache::file_for(const std::string& class_name) const {
    std::string safe;
    for (char raw : class_name) {
        auto c = static_cast<unsigned char>(raw);
        safe += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_';
    }
    if (safe.empty()) throw Error("prompt cache: empty class name");
    return root_ / dataset_ / (safe + ".jsonl");
}

std::optional<std::vector<std::string>> PromptCache::lookup(const std::string& class_name,
                                                            const std::string& tmpl_hash,
                                                            const std::string& model_id,
                                                            int m) const {
    std::ifstream in(file_for(class_name));
    if (!in) return std::nullopt;
    std::map<int, std::string> found;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) continue; // damaged row -> treat as absent
        if (rec.value("template_hash", "") != tmpl_hash) continue;
        if (rec.value("model_id", "") != model_id) continue;
        if (!rec.contains("index") || !rec.contains("prompt")) continue;
        found[rec["index"].get<int>()] = rec["prompt"].get<std::string>();
    }
    std::vector<std::string> prompts;
    for (int i = 0; i < m; ++i) {
        auto it = found.find(i);
        if (it == found.end()) return std::nullopt;
        prompts.push_back(it->second);
    }
    return prompts;
}

void PromptCache::store(const std::string& class_name, const std::string& tmpl_hash,
                        const std::string& model_id, const std::vector<std::string>& prompts) {
    std::filesystem::path path = file_for(class_name);
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("prompt cache: cannot open " + path.string());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        json rec = {{"index", static_cast<int>(i)},
                    {"prompt", prompts[i]},
                    {"model_id", model_id},
                    {"template_hash", tmpl_hash}};
        out << rec.dump() << "\n";
    }
    if (!out) throw Error("prompt cache: write failed for " + path.string());
}

CacheLock::CacheLock(std::filesystem::path target) {
    lock_path_ = target;
    lock_path_ += ".lock";
    std::filesystem::create_directories(target.parent_path());
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
    for (;;) {
        int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            ::close(fd);
            return;
        }
        if (std::chrono::steady_clock::now() > deadline)
            throw Error("timed out waiting for cache lock: " + lock_path_.string());
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
}

CacheLock::~CacheLock() {
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
}

PromptSet generate_prompts(const std::string& class_name, int m,
                           const PromptRequestTemplate& t, backends::ChatBackend& provider,
                           PromptCache& cache, const backends::ChatParams& params) {
    if (m < 1) throw Error("generate_prompts: m must be >= 1");
    if (t.class_name != class_name)
        throw Error("generate_prompts: template targets \"" + t.class_name +
                    "\" but class \"" + class_name + "\" was requested");
    t.validate();

    const std::string th = template_hash(t);
    const std::string model_id = provider.descriptor().model_id;

    PromptSet set;
    set.class_name = class_name;
    set.provider = provider.descriptor();
    set.template_hash = th;
    set.created_at = now_iso8601();

    if (auto hit = cache.lookup(class_name, th, model_id, m)) {
        set.prompts = std::move(*hit);
        return set;
    }

    CacheLock lock(cache.file_for(class_name));
    if (auto hit = cache.lookup(class_name, th, model_id, m)) { // raced writer won
        set.prompts = std::move(*hit);
        return set;
    }

    for (int index = 0; index < m; ++index) {
        PromptRequestTemplate req = t;
        req.index = index;
        std::string text;
        PromptValidation check;
        bool ok = false;
        for (int attempt = 0; attempt < 3; ++attempt) {
            text = trim(chat_complete(build_llm_request(req, attempt), params, provider));
            check = validate_prompt(text, class_name, t.all_class_names);
            if (check.valid) {
                ok = true;
                break;
            }
        }
        if (!ok)
            throw Error("prompt for class \"" + class_name + "\" index " +
                        std::to_string(index) + " failed validation after 3 attempts (" +
                        check.reason + "): " + text);
        set.prompts.push_back(text);
    }

    cache.store(class_name, th, model_id, set.prompts);
    return set;
}

} // namespace dalda::prompting
