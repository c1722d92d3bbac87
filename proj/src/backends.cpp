#include "dalda/backends.hpp"

#include "dalda/errors.hpp"
#include "dalda/hash.hpp"
#include "dalda/rng.hpp"
#include "post_json.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <functional>
#include <regex>
#include <sstream>
#include <thread>

// httplib is pulled in by the .cpp only; keeping it out of the public header
// saves every TU from the full HTTP stack.
#include <httplib.h>

namespace dalda::backends {

using nlohmann::json;

double EmbeddingVector::norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
}

void EmbeddingVector::normalize() {
    double n = norm();
    if (!(n > 1e-12)) throw BackendError(BackendError::Kind::malformed, "embedding: zero norm");
    for (double& v : values) v /= n;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw Error("cosine: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()));
    double s = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        s += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
    return s / std::sqrt(na * nb);
}

EmbeddingVector mock_embedding(std::string_view payload, int dim, std::uint64_t seed) {
    if (dim < 2)
        throw BackendError(BackendError::Kind::invalid_input, "mock_embedding: dim must be >= 2");
    Sha256 h;
    h.part(payload).part_u64(seed);
    Rng rng(digest_to_seed(h.finish()));
    EmbeddingVector v;
    v.values.resize(static_cast<std::size_t>(dim));
    for (double& x : v.values) x = rng.normal();
    v.normalize();
    return v;
}

namespace {

constexpr int kPoolSide = 16; // images are mean-pooled to 16x16x3 before projection

std::vector<double> pool_image(const Image& img) {
    std::vector<double> pooled(static_cast<std::size_t>(kPoolSide) * kPoolSide * 3, 0.0);
    std::vector<int> counts(pooled.size(), 0);
    for (int y = 0; y < img.height; ++y) {
        int py = y * kPoolSide / img.height;
        for (int x = 0; x < img.width; ++x) {
            int px = x * kPoolSide / img.width;
            for (int c = 0; c < 3; ++c) {
                std::size_t idx = (static_cast<std::size_t>(py) * kPoolSide + px) * 3 + c;
                pooled[idx] += img.at(y, x, c) / 255.0;
                counts[idx]++;
            }
        }
    }
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        if (counts[i] > 0) pooled[i] = pooled[i] / counts[i] - 0.5;
    }
    return pooled;
}

std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) tokens.push_back(cur), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

} // namespace

MockEmbeddingBackend::MockEmbeddingBackend(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ < 2) throw BackendError(BackendError::Kind::invalid_input, "embedding dim must be >= 2");
    const std::size_t cols = static_cast<std::size_t>(kPoolSide) * kPoolSide * 3;
    projection_.resize(static_cast<std::size_t>(dim_) * cols);
    Rng rng(derive_seed(seed_, "mock-embedding-projection"));
    for (double& w : projection_) w = rng.normal();
}

EmbeddingVector MockEmbeddingBackend::embed_image(const Image& image) {
    if (!image.valid())
        throw BackendError(BackendError::Kind::invalid_input, "embed_image: undecodable image");
    std::vector<double> pooled = pool_image(image);
    EmbeddingVector v;
    v.values.assign(static_cast<std::size_t>(dim_), 0.0);
    const std::size_t cols = pooled.size();
    for (int r = 0; r < dim_; ++r) {
        const double* row = projection_.data() + static_cast<std::size_t>(r) * cols;
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * pooled[c];
        v.values[static_cast<std::size_t>(r)] = s;
    }
    if (v.norm() <= 1e-12) return mock_embedding(image.bytes(), dim_, seed_);
    v.normalize();
    return v;
}

EmbeddingVector MockEmbeddingBackend::embed_text(const std::string& text) {
    if (text.empty())
        throw BackendError(BackendError::Kind::invalid_input, "embed_text: empty text");
    EmbeddingVector sum;
    sum.values.assign(static_cast<std::size_t>(dim_), 0.0);
    for (const std::string& tok : tokenize_lower(text)) {
        EmbeddingVector t = mock_embedding(tok, dim_, seed_);
        for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += t.values[i];
    }
    if (sum.norm() <= 1e-12) return mock_embedding(text, dim_, seed_);
    sum.normalize();
    return sum;
}

BackendDescriptor MockEmbeddingBackend::descriptor() const {
    return {BackendDescriptor::Kind::embedding, "mock-embedding", std::nullopt, true};
}

std::string chat_complete(const std::vector<ChatMessage>& messages, const ChatParams& params,
                          ChatBackend& provider) {
    if (messages.empty())
        throw BackendError(BackendError::Kind::invalid_input, "chat_complete: empty message list");
    return provider.complete(messages, params);
}

namespace {

const char* kMockActions[] = {"resting quietly",    "wandering slowly", "captured mid-motion",
                              "posing calmly",      "moving briskly",   "pictured up close",
                              "seen from a distance", "standing still"};
const char* kMockPlaces[] = {"in a sunlit meadow",    "near a quiet stream",
                             "against a plain backdrop", "under an overcast sky",
                             "on a wooden floor",     "amid autumn foliage",
                             "by an old stone wall",  "in soft morning light"};
const char* kMockAdjectives[] = {"small", "large", "young",  "bright",
                                 "calm",  "lively", "gentle", "sturdy"};

std::optional<std::string> find_marker(const std::string& text, const std::regex& re) {
    std::smatch m;
    if (std::regex_search(text, m, re)) return m[1].str();
    return std::nullopt;
}

} // namespace

std::string MockChatBackend::complete(const std::vector<ChatMessage>& messages,
                                      const ChatParams& params) {
    (void)params; // the mock is greedy regardless of sampling knobs
    if (messages.empty())
        throw BackendError(BackendError::Kind::invalid_input, "mock chat: empty message list");
    std::string content;
    for (const auto& m : messages) content += m.role + "\n" + m.content + "\n";

    static const std::regex class_re("Target class: \"([^\"]+)\"");
    static const std::regex index_re("Prompt index: ([0-9]+)");
    std::string cls = find_marker(content, class_re).value_or("subject");
    std::uint64_t index = 0;
    if (auto idx = find_marker(content, index_re)) index = std::stoull(*idx);

    std::uint64_t h = derive_seed(seed_, content);
    const auto& action = kMockActions[index % 8];
    const auto& place = kMockPlaces[(index / 8 + h) % 8];
    const auto& adj = kMockAdjectives[h % 8];
    return "A " + std::string(adj) + " " + cls + " " + action + " " + place + ".";
}

BackendDescriptor MockChatBackend::descriptor() const {
    return {BackendDescriptor::Kind::chat, "mock-chat", std::nullopt, true};
}

// ---------------------------------------------------------------------------
// Remote adapters
// ---------------------------------------------------------------------------

namespace {

struct SplitUrl {
    std::string host_port; // scheme://host:port
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw BackendError(BackendError::Kind::invalid_input, "endpoint missing scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

json post_json(const std::string& endpoint, const json& body, const RetryPolicy& retry) {
    SplitUrl u = split_url(endpoint);
    int backoff_ms = retry.initial_backoff_ms;
    std::string last_error;
    for (int attempt = 0; attempt < std::max(1, retry.attempts); ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Client client(u.host_port);
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(30, 0);
        if (const char* key = std::getenv("DALDA_API_KEY"))
            client.set_bearer_token_auth(key);
        auto res = client.Post(u.path, body.dump(), "application/json");
        if (!res) {
            last_error = "connection failed to " + endpoint;
            continue;
        }
        if (res->status == 429) {
            last_error = "rate limited by " + endpoint;
            if (attempt + 1 >= retry.attempts)
                throw BackendError(BackendError::Kind::rate_limited, last_error);
            continue;
        }
        if (res->status >= 500) {
            last_error = "status " + std::to_string(res->status) + " from " + endpoint;
            continue;
        }
        if (res->status != 200)
            throw BackendError(BackendError::Kind::malformed,
                               "status " + std::to_string(res->status) + " from " + endpoint);
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded())
            throw BackendError(BackendError::Kind::malformed, "invalid JSON from " + endpoint);
        return parsed;
    }
    throw BackendError(BackendError::Kind::unreachable, last_error);
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(std::string endpoint, std::string model_id, int dim,
                                               RetryPolicy retry)
    : endpoint_(std::move(endpoint)), model_id_(std::move(model_id)), dim_(dim), retry_(retry) {}

EmbeddingVector RemoteEmbeddingBackend::request_embedding(const std::string& kind,
                                                          const std::string& payload) {
    json body = {{"kind", kind}, {"payload", payload}};
    json res = post_json(endpoint_, body, retry_);
    if (!res.contains("vector") || !res["vector"].is_array())
        throw BackendError(BackendError::Kind::malformed, "embedding response missing vector");
    EmbeddingVector v;
    v.values = res["vector"].get<std::vector<double>>();
    if (static_cast<int>(v.dim()) != dim_)
        throw BackendError(BackendError::Kind::malformed,
                           "embedding dimension " + std::to_string(v.dim()) + ", expected " +
                               std::to_string(dim_));
    v.normalize();
    return v;
}

EmbeddingVector RemoteEmbeddingBackend::embed_image(const Image& image) {
    if (!image.valid())
        throw BackendError(BackendError::Kind::invalid_input, "embed_image: undecodable image");
    return request_embedding("image", base64_encode(image.bytes()));
}

EmbeddingVector RemoteEmbeddingBackend::embed_text(const std::string& text) {
    if (text.empty())
        throw BackendError(BackendError::Kind::invalid_input, "embed_text: empty text");
    return request_embedding("text", text);
}

BackendDescriptor RemoteEmbeddingBackend::descriptor() const {
    return {BackendDescriptor::Kind::embedding, model_id_, endpoint_, false};
}

RemoteChatBackend::RemoteChatBackend(std::string endpoint, std::string model_id, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), model_id_(std::move(model_id)), retry_(retry) {}

std::string RemoteChatBackend::complete(const std::vector<ChatMessage>& messages,
                                        const ChatParams& params) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    json body = {{"messages", msgs},
                 {"temperature", params.temperature},
                 {"top_p", params.top_p},
                 {"frequency_penalty", params.frequency_penalty},
                 {"presence_penalty", params.presence_penalty}};
    json res = post_json(endpoint_, body, retry_);
    if (!res.contains("content") || !res["content"].is_string())
        throw BackendError(BackendError::Kind::malformed, "chat response missing content");
    return res["content"].get<std::string>();
}

BackendDescriptor RemoteChatBackend::descriptor() const {
    return {BackendDescriptor::Kind::chat, model_id_, endpoint_, false};
}

// ---------------------------------------------------------------------------
// base64
// ---------------------------------------------------------------------------

namespace {
const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < data.size()) {
        std::uint32_t n = (static_cast<std::uint8_t>(data[i]) << 16) |
                          (static_cast<std::uint8_t>(data[i + 1]) << 8) |
                          static_cast<std::uint8_t>(data[i + 2]);
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += kB64[n & 63];
        i += 3;
    }
    if (i + 1 == data.size()) {
        std::uint32_t n = static_cast<std::uint8_t>(data[i]) << 16;
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == data.size()) {
        std::uint32_t n = (static_cast<std::uint8_t>(data[i]) << 16) |
                          (static_cast<std::uint8_t>(data[i + 1]) << 8);
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(std::string_view data) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buf = 0;
    int bits = 0;
    for (char c : data) {
        if (c == '=') break;
        int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((buf >> bits) & 0xff);
        }
    }
    return out;
}

} // namespace dalda::backends
