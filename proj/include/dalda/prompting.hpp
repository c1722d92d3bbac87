#pragma once

#include "dalda/backends.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dalda::prompting {

// Wording of the chat request ships as a versioned constant; its digest folds
// into template_hash so any edit invalidates caches.
extern const char* const kRequestWordingVersion;

struct PromptRequestTemplate {
    std::string dataset_description;
    std::string class_name;
    std::vector<std::string> all_class_names;
    std::string diversity_instructions =
        "Write exactly one realistic sentence that varies the action, viewpoint, "
        "and environmental features of the subject.";
    int index = 0; // in [0, m)

    void validate() const; // class_name must appear in all_class_names
};

struct PromptSet {
    std::string class_name;
    std::vector<std::string> prompts;
    backends::BackendDescriptor provider;
    std::string template_hash;
    std::string created_at;
};

// Hash over every template field except index, plus the wording version.
std::string template_hash(const PromptRequestTemplate& t);

// Ordered chat messages. attempt > 0 marks a retry after a rejected prompt so
// deterministic providers produce fresh text.
std::vector<backends::ChatMessage> build_llm_request(const PromptRequestTemplate& t,
                                                     int attempt = 0);

struct PromptValidation {
    bool valid = true;
    std::string reason;
};

// Total function. Rejects empty prompts, prompts over 300 characters, and
// prompts that word-boundary match a class name other than class_name
// (case-insensitive; spaces, underscores, and hyphens are equivalent; when
// matches overlap, the longest class name wins).
PromptValidation validate_prompt(const std::string& prompt, const std::string& class_name,
                                 const std::vector<std::string>& all_class_names);

// One structured-text file per (dataset, class) under root; rows are keyed by
// template_hash + model_id. Writers take a per-key exclusive lock before
// calling the provider so concurrent processes issue at most one call per key.
class PromptCache {
  public:
    PromptCache(std::filesystem::path root, std::string dataset_name);

    std::optional<std::vector<std::string>> lookup(const std::string& class_name,
                                                   const std::string& tmpl_hash,
                                                   const std::string& model_id, int m) const;
    void store(const std::string& class_name, const std::string& tmpl_hash,
               const std::string& model_id, const std::vector<std::string>& prompts);

    std::filesystem::path file_for(const std::string& class_name) const;
    const std::filesystem::path& root() const { return root_; }
    const std::string& dataset_name() const { return dataset_; }

  private:
    std::filesystem::path root_;
    std::string dataset_;
};

// Exclusive per-key lock file; blocks until acquired, removed on destruction.
class CacheLock {
  public:
    explicit CacheLock(std::filesystem::path target);
    ~CacheLock();
    CacheLock(const CacheLock&) = delete;
    CacheLock& operator=(const CacheLock&) = delete;

  private:
    std::filesystem::path lock_path_;
};

PromptSet generate_prompts(const std::string& class_name, int m,
                           const PromptRequestTemplate& t, backends::ChatBackend& provider,
                           PromptCache& cache,
                           const backends::ChatParams& params = {});

} // namespace dalda::prompting
