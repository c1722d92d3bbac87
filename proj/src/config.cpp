#include "dalda/config.hpp"

#include "dalda/errors.hpp"
#include "dalda/hash.hpp"
#include "dalda/util.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dalda::config {

using nlohmann::json;

namespace {

bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

// Parses one TOML scalar/array; pos ends past the value.
json parse_value(const std::string& s, std::size_t& pos, const std::string& where);

json parse_scalar(const std::string& s, std::size_t& pos, const std::string& where) {
    if (pos >= s.size()) throw ConfigError(where + ": missing value");
    char c = s[pos];
    if (c == '"') {
        std::string out;
        ++pos;
        while (pos < s.size() && s[pos] != '"') {
            if (s[pos] == '\\') {
                ++pos;
                if (pos >= s.size()) throw ConfigError(where + ": dangling escape");
                switch (s[pos]) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: throw ConfigError(where + ": unsupported escape \\" + s[pos]);
                }
            } else {
                out += s[pos];
            }
            ++pos;
        }
        if (pos >= s.size()) throw ConfigError(where + ": unterminated string");
        ++pos; // closing quote
        return out;
    }
    std::size_t start = pos;
    while (pos < s.size() && s[pos] != ',' && s[pos] != ']' && s[pos] != '#') ++pos;
    std::string tok = trim(s.substr(start, pos - start));
    if (tok.empty()) throw ConfigError(where + ": missing value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    // Number: integer when it looks integral, double otherwise.
    bool numeric = true;
    bool floaty = false;
    for (std::size_t i = 0; i < tok.size(); ++i) {
        char ch = tok[i];
        if (ch == '+' || ch == '-') {
            if (i != 0 && tok[i - 1] != 'e' && tok[i - 1] != 'E') numeric = false;
        } else if (ch == '.' || ch == 'e' || ch == 'E') {
            floaty = true;
        } else if (!std::isdigit(static_cast<unsigned char>(ch))) {
            numeric = false;
        }
    }
    if (!numeric) throw ConfigError(where + ": cannot parse value \"" + tok + "\"");
    try {
        if (floaty) return std::stod(tok);
        if (tok[0] == '-') return static_cast<std::int64_t>(std::stoll(tok));
        return static_cast<std::uint64_t>(std::stoull(tok));
    } catch (const std::exception&) {
        throw ConfigError(where + ": cannot parse number \"" + tok + "\"");
    }
}

json parse_value(const std::string& s, std::size_t& pos, const std::string& where) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '[') {
        json arr = json::array();
        ++pos;
        for (;;) {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
            if (pos >= s.size()) throw ConfigError(where + ": unterminated array");
            if (s[pos] == ']') {
                ++pos;
                break;
            }
            arr.push_back(parse_scalar(s, pos, where));
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
            if (pos < s.size() && s[pos] == ',') {
                ++pos;
            } else if (pos < s.size() && s[pos] == ']') {
                ++pos;
                break;
            } else if (pos >= s.size()) {
                throw ConfigError(where + ": unterminated array");
            } else {
                throw ConfigError(where + ": expected ',' or ']' in array");
            }
        }
        return arr;
    }
    return parse_scalar(s, pos, where);
}

void set_dotted(json& root, const std::string& dotted, json value, const std::string& where) {
    json* node = &root;
    std::size_t start = 0;
    for (;;) {
        std::size_t dot = dotted.find('.', start);
        std::string part = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError(where + ": empty key segment in \"" + dotted + "\"");
        if (dot == std::string::npos) {
            if (node->contains(part))
                throw ConfigError(where + ": duplicate key \"" + dotted + "\"");
            (*node)[part] = std::move(value);
            return;
        }
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null())
            throw ConfigError(where + ": key \"" + dotted + "\" collides with a scalar");
        start = dot + 1;
    }
}

} // namespace

json parse_toml_subset(const std::string& text, const std::string& origin) {
    json root = json::object();
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string where = origin + ":" + std::to_string(line_no);
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '[') {
            auto close = line.find(']');
            if (close == std::string::npos) throw ConfigError(where + ": unterminated section");
            section = trim(line.substr(1, close - 1));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            for (char c : section)
                if (!is_bare_key_char(c) && c != '.')
                    throw ConfigError(where + ": bad section name \"" + section + "\"");
            std::string rest = trim(line.substr(close + 1));
            if (!rest.empty() && rest[0] != '#')
                throw ConfigError(where + ": trailing characters after section header");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        for (char c : key)
            if (!is_bare_key_char(c) && c != '.')
                throw ConfigError(where + ": bad key \"" + key + "\"");
        std::size_t pos = eq + 1;
        json value = parse_value(line, pos, where);
        std::string rest = trim(line.substr(pos));
        if (!rest.empty() && rest[0] != '#')
            throw ConfigError(where + ": trailing characters after value");
        std::string dotted = section.empty() ? key : section + "." + key;
        set_dotted(root, dotted, std::move(value), where);
    }
    return root;
}

json parse_toml_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml_subset(buf.str(), path.string());
}

namespace {

struct Setter {
    std::function<void(RunConfig&, const json&)> apply;
    const char* type_name;
};

void expect(bool ok, const std::string& key, const char* type_name) {
    if (!ok) throw ConfigError("config key \"" + key + "\": expected " + type_name);
}

std::map<std::string, Setter> build_key_table() {
    std::map<std::string, Setter> t;
    auto add_str = [&](const std::string& key, std::string RunConfig::* unused,
                       std::function<std::string&(RunConfig&)> get) {
        (void)unused;
        t[key] = {[get, key](RunConfig& c, const json& v) {
                      expect(v.is_string(), key, "string");
                      get(c) = v.get<std::string>();
                  },
                  "string"};
    };
    auto str = [&](const std::string& key, std::function<std::string&(RunConfig&)> get) {
        t[key] = {[get, key](RunConfig& c, const json& v) {
                      expect(v.is_string(), key, "string");
                      get(c) = v.get<std::string>();
                  },
                  "string"};
    };
    auto num = [&](const std::string& key, std::function<double&(RunConfig&)> get) {
        t[key] = {[get, key](RunConfig& c, const json& v) {
                      expect(v.is_number(), key, "number");
                      get(c) = v.get<double>();
                  },
                  "number"};
    };
    auto integer = [&](const std::string& key, std::function<int&(RunConfig&)> get) {
        t[key] = {[get, key](RunConfig& c, const json& v) {
                      expect(v.is_number_integer() || v.is_number_unsigned(), key, "integer");
                      get(c) = v.get<int>();
                  },
                  "integer"};
    };
    auto u64 = [&](const std::string& key, std::function<std::uint64_t&(RunConfig&)> get) {
        t[key] = {[get, key](RunConfig& c, const json& v) {
                      expect(v.is_number_integer() || v.is_number_unsigned(), key, "integer");
                      get(c) = v.get<std::uint64_t>();
                  },
                  "integer"};
    };
    (void)add_str;

    u64("global_seed", [](RunConfig& c) -> std::uint64_t& { return c.global_seed; });
    str("output_root", [](RunConfig& c) -> std::string& { return c.output_root; });

    str("backends.embedding", [](RunConfig& c) -> std::string& { return c.backends.embedding; });
    str("backends.chat", [](RunConfig& c) -> std::string& { return c.backends.chat; });
    str("backends.diffusion", [](RunConfig& c) -> std::string& { return c.backends.diffusion; });
    integer("backends.embedding_dim", [](RunConfig& c) -> int& { return c.backends.embedding_dim; });
    str("backends.embedding_model",
        [](RunConfig& c) -> std::string& { return c.backends.embedding_model; });
    str("backends.chat_model", [](RunConfig& c) -> std::string& { return c.backends.chat_model; });
    str("backends.diffusion_model",
        [](RunConfig& c) -> std::string& { return c.backends.diffusion_model; });
    str("backends.embedding_endpoint",
        [](RunConfig& c) -> std::string& { return c.backends.embedding_endpoint; });
    str("backends.chat_endpoint",
        [](RunConfig& c) -> std::string& { return c.backends.chat_endpoint; });
    str("backends.diffusion_endpoint",
        [](RunConfig& c) -> std::string& { return c.backends.diffusion_endpoint; });

    num("scoring.hc_boundary", [](RunConfig& c) -> double& { return c.scoring.hc_boundary; });
    str("scoring.template", [](RunConfig& c) -> std::string& { return c.scoring.template_text; });

    num("ags.alpha", [](RunConfig& c) -> double& { return c.ags.alpha; });
    num("ags.min_low", [](RunConfig& c) -> double& { return c.ags.min_low; });
    num("ags.max_low", [](RunConfig& c) -> double& { return c.ags.max_low; });
    num("ags.min_high", [](RunConfig& c) -> double& { return c.ags.min_high; });
    num("ags.max_high", [](RunConfig& c) -> double& { return c.ags.max_high; });
    num("ags.sigma_per_example",
        [](RunConfig& c) -> double& { return c.ags.sigma_per_example; });

    integer("prompting.m", [](RunConfig& c) -> int& { return c.prompting.m; });
    str("prompting.dataset_description",
        [](RunConfig& c) -> std::string& { return c.prompting.dataset_description; });
    str("prompting.description_file",
        [](RunConfig& c) -> std::string& { return c.prompting.description_file; });
    str("prompting.cache_dir", [](RunConfig& c) -> std::string& { return c.prompting.cache_dir; });
    num("prompting.temperature", [](RunConfig& c) -> double& { return c.prompting.temperature; });
    num("prompting.top_p", [](RunConfig& c) -> double& { return c.prompting.top_p; });
    num("prompting.frequency_penalty",
        [](RunConfig& c) -> double& { return c.prompting.frequency_penalty; });
    num("prompting.presence_penalty",
        [](RunConfig& c) -> double& { return c.prompting.presence_penalty; });

    num("generation.guidance_scale",
        [](RunConfig& c) -> double& { return c.generation.guidance_scale; });
    integer("generation.image_size", [](RunConfig& c) -> int& { return c.generation.image_size; });
    integer("generation.workers", [](RunConfig& c) -> int& { return c.generation.workers; });
    str("generation.lambda_policy",
        [](RunConfig& c) -> std::string& { return c.generation.lambda_policy; });
    num("generation.fixed_lambda",
        [](RunConfig& c) -> double& { return c.generation.fixed_lambda; });
    num("generation.rs_min", [](RunConfig& c) -> double& { return c.generation.rs_min; });
    num("generation.rs_max", [](RunConfig& c) -> double& { return c.generation.rs_max; });

    num("mixing.synthetic_probability",
        [](RunConfig& c) -> double& { return c.mixing.synthetic_probability; });
    integer("mixing.epochs", [](RunConfig& c) -> int& { return c.mixing.epochs; });
    integer("mixing.batch_size", [](RunConfig& c) -> int& { return c.mixing.batch_size; });
    integer("mixing.image_size", [](RunConfig& c) -> int& { return c.mixing.image_size; });
    num("mixing.learning_rate", [](RunConfig& c) -> double& { return c.mixing.learning_rate; });
    integer("mixing.trials", [](RunConfig& c) -> int& { return c.mixing.trials; });

    str("metrics.pairing", [](RunConfig& c) -> std::string& { return c.metrics.pairing; });
    str("metrics.lpips_backend",
        [](RunConfig& c) -> std::string& { return c.metrics.lpips_backend; });

    str("dataset.data_root", [](RunConfig& c) -> std::string& { return c.dataset.data_root; });
    integer("dataset.n_per_class", [](RunConfig& c) -> int& { return c.dataset.n_per_class; });
    return t;
}

const std::map<std::string, Setter>& key_table() {
    static const std::map<std::string, Setter> table = build_key_table();
    return table;
}

void apply_tree(RunConfig& cfg, const json& tree, const std::string& prefix) {
    for (auto it = tree.begin(); it != tree.end(); ++it) {
        std::string dotted = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.value().is_object()) {
            apply_tree(cfg, it.value(), dotted);
            continue;
        }
        auto handler = key_table().find(dotted);
        if (handler == key_table().end())
            throw ConfigError("unknown config key: " + dotted);
        handler->second.apply(cfg, it.value());
    }
}

void check_range(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key \"" + key + "\" out of range: " + what);
}

} // namespace

void RunConfig::validate() const {
    check_range(ags.alpha > 0.0 && ags.alpha < 1.0, "ags.alpha", "must be in (0,1)");
    check_range(ags.min_low < ags.max_low, "ags.min_low", "low range must be increasing");
    check_range(ags.min_high < ags.max_high, "ags.min_high", "high range must be increasing");
    check_range(ags.min_low >= 0.0 && ags.max_low <= 1.0, "ags.max_low", "low range within [0,1]");
    check_range(ags.min_high >= 0.0 && ags.max_high <= 1.0, "ags.max_high",
                "high range within [0,1]");
    check_range(ags.sigma_per_example > 0.0, "ags.sigma_per_example", "must be > 0");
    check_range(scoring.hc_boundary > 0.0 && scoring.hc_boundary < 1.0, "scoring.hc_boundary",
                "must be in (0,1)");
    check_range(prompting.m >= 1, "prompting.m", "must be >= 1");
    check_range(prompting.temperature >= 0.0, "prompting.temperature", "must be >= 0");
    check_range(prompting.top_p > 0.0 && prompting.top_p <= 1.0, "prompting.top_p",
                "must be in (0,1]");
    check_range(generation.guidance_scale > 0.0, "generation.guidance_scale", "must be > 0");
    check_range(generation.image_size >= 1, "generation.image_size", "must be >= 1");
    check_range(generation.workers >= 1, "generation.workers", "must be >= 1");
    check_range(generation.lambda_policy == "ags" || generation.lambda_policy == "random_scaling" ||
                    generation.lambda_policy == "fixed",
                "generation.lambda_policy", "must be ags|random_scaling|fixed");
    check_range(generation.fixed_lambda >= 0.0 && generation.fixed_lambda <= 1.0,
                "generation.fixed_lambda", "must be in [0,1]");
    check_range(generation.rs_min >= 0.0 && generation.rs_max <= 1.0 &&
                    generation.rs_min < generation.rs_max,
                "generation.rs_min", "range must satisfy 0 <= min < max <= 1");
    check_range(mixing.synthetic_probability >= 0.0 && mixing.synthetic_probability <= 1.0,
                "mixing.synthetic_probability", "must be in [0,1]");
    check_range(mixing.epochs >= 1, "mixing.epochs", "must be >= 1");
    check_range(mixing.batch_size >= 1, "mixing.batch_size", "must be >= 1");
    check_range(mixing.image_size >= 1, "mixing.image_size", "must be >= 1");
    check_range(mixing.learning_rate > 0.0, "mixing.learning_rate", "must be > 0");
    check_range(mixing.trials >= 1, "mixing.trials", "must be >= 1");
    check_range(metrics.pairing == "synthetic_vs_real" ||
                    metrics.pairing == "synthetic_vs_synthetic",
                "metrics.pairing", "must be synthetic_vs_real|synthetic_vs_synthetic");
    check_range(metrics.lpips_backend == "mock" || metrics.lpips_backend == "none",
                "metrics.lpips_backend", "must be mock|none");
    check_range(dataset.n_per_class >= 1, "dataset.n_per_class", "must be >= 1");
    check_range(backends.embedding == "mock" || backends.embedding == "remote",
                "backends.embedding", "must be mock|remote");
    check_range(backends.chat == "mock" || backends.chat == "remote", "backends.chat",
                "must be mock|remote");
    check_range(backends.diffusion == "toy" || backends.diffusion == "remote",
                "backends.diffusion", "must be toy|remote");
    check_range(backends.embedding_dim >= 2, "backends.embedding_dim", "must be >= 2");
}

json RunConfig::to_json() const {
    return {
        {"global_seed", global_seed},
        {"output_root", output_root},
        {"backends",
         {{"embedding", backends.embedding},
          {"chat", backends.chat},
          {"diffusion", backends.diffusion},
          {"embedding_dim", backends.embedding_dim},
          {"embedding_model", backends.embedding_model},
          {"chat_model", backends.chat_model},
          {"diffusion_model", backends.diffusion_model},
          {"embedding_endpoint", backends.embedding_endpoint},
          {"chat_endpoint", backends.chat_endpoint},
          {"diffusion_endpoint", backends.diffusion_endpoint}}},
        {"scoring",
         {{"hc_boundary", scoring.hc_boundary}, {"template", scoring.template_text}}},
        {"ags",
         {{"alpha", ags.alpha},
          {"min_low", ags.min_low},
          {"max_low", ags.max_low},
          {"min_high", ags.min_high},
          {"max_high", ags.max_high},
          {"sigma_per_example", ags.sigma_per_example}}},
        {"prompting",
         {{"m", prompting.m},
          {"dataset_description", prompting.dataset_description},
          {"description_file", prompting.description_file},
          {"cache_dir", prompting.cache_dir},
          {"temperature", prompting.temperature},
          {"top_p", prompting.top_p},
          {"frequency_penalty", prompting.frequency_penalty},
          {"presence_penalty", prompting.presence_penalty}}},
        {"generation",
         {{"guidance_scale", generation.guidance_scale},
          {"image_size", generation.image_size},
          {"workers", generation.workers},
          {"lambda_policy", generation.lambda_policy},
          {"fixed_lambda", generation.fixed_lambda},
          {"rs_min", generation.rs_min},
          {"rs_max", generation.rs_max}}},
        {"mixing",
         {{"synthetic_probability", mixing.synthetic_probability},
          {"epochs", mixing.epochs},
          {"batch_size", mixing.batch_size},
          {"image_size", mixing.image_size},
          {"learning_rate", mixing.learning_rate},
          {"trials", mixing.trials}}},
        {"metrics", {{"pairing", metrics.pairing}, {"lpips_backend", metrics.lpips_backend}}},
        {"dataset", {{"data_root", dataset.data_root}, {"n_per_class", dataset.n_per_class}}},
    };
}

RunConfig RunConfig::from_json(const json& j, const std::string& origin) {
    RunConfig cfg;
    apply_tree(cfg, j, "");
    (void)origin;
    return cfg;
}

namespace {

std::string toml_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    out += "\"";
    return out;
}

void emit_value(std::ostream& out, const json& v) {
    if (v.is_string())
        out << toml_string(v.get<std::string>());
    else
        out << v.dump();
}

} // namespace

std::string RunConfig::serialize_toml() const {
    json tree = to_json();
    std::ostringstream out;
    // Top-level scalars first, then sections (alphabetical via json ordering).
    for (auto it = tree.begin(); it != tree.end(); ++it) {
        if (it.value().is_object()) continue;
        out << it.key() << " = ";
        emit_value(out, it.value());
        out << "\n";
    }
    for (auto it = tree.begin(); it != tree.end(); ++it) {
        if (!it.value().is_object()) continue;
        out << "\n[" << it.key() << "]\n";
        for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
            out << kv.key() << " = ";
            emit_value(out, kv.value());
            out << "\n";
        }
    }
    return out.str();
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

std::string RunConfig::digest_masking(const std::vector<std::string>& dotted_keys) const {
    json tree = to_json();
    for (const auto& dotted : dotted_keys) {
        json* node = &tree;
        std::size_t start = 0;
        bool found = true;
        for (;;) {
            std::size_t dot = dotted.find('.', start);
            std::string part =
                dotted.substr(start, dot == std::string::npos ? dot : dot - start);
            if (!node->contains(part)) {
                found = false;
                break;
            }
            if (dot == std::string::npos) {
                (*node)[part] = nullptr;
                break;
            }
            node = &(*node)[part];
            start = dot + 1;
        }
        if (!found) throw ConfigError("digest mask: unknown key " + dotted);
    }
    return sha256_hex(tree.dump());
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (file) apply_tree(cfg, parse_toml_file(*file), "");

    // Environment sits between file and flags.
    if (const char* cache = std::getenv("DALDA_CACHE_DIR"))
        if (*cache) cfg.prompting.cache_dir = cache;

    for (const auto& [key, raw] : overrides) {
        // Flag values arrive unquoted: try the TOML scalar grammar first and
        // fall back to treating the whole value as a bare string.
        json value;
        bool parsed = false;
        try {
            std::size_t pos = 0;
            value = parse_value(raw, pos, "--" + key);
            parsed = trim(raw.substr(pos)).empty();
        } catch (const ConfigError&) {
            parsed = false;
        }
        if (!parsed) value = trim(raw);
        json tree = json::object();
        set_dotted(tree, key, std::move(value), "--" + key);
        apply_tree(cfg, tree, "");
    }
    cfg.validate();
    return cfg;
}

} // namespace dalda::config
