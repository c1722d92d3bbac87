#pragma once

#include "dalda/image.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dalda::backends {

// Unit-norm feature vector. Bridges the image/text feature roles of the
// decoupled cross-attention as well as the scoring and probe paths.
struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    double norm() const;
    void normalize(); // throws on zero vector
};

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

struct BackendDescriptor {
    enum class Kind { embedding, diffusion, chat };
    Kind kind = Kind::embedding;
    std::string model_id;
    std::optional<std::string> endpoint;
    bool deterministic = false;
};

// Deterministic unit vector from hash(payload, seed) -> portable PRNG ->
// Gaussian draws projected to the sphere. Identical inputs give identical
// outputs across processes and platforms.
EmbeddingVector mock_embedding(std::string_view payload, int dim, std::uint64_t seed);

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual EmbeddingVector embed_image(const Image& image) = 0;
    virtual EmbeddingVector embed_text(const std::string& text) = 0;
    virtual int dim() const = 0;
    virtual BackendDescriptor descriptor() const = 0;
};

// Hermetic embedding backend. Text is embedded as the normalized sum of
// per-token hash vectors, so shared words raise cosine. Images go through a
// mean-pooled seeded random projection, so pixel-space similarity carries
// into embedding cosine (exercised by the toy generator tests).
class MockEmbeddingBackend : public EmbeddingBackend {
public:
    explicit MockEmbeddingBackend(int dim = 64, std::uint64_t seed = 0);

    EmbeddingVector embed_image(const Image& image) override;
    EmbeddingVector embed_text(const std::string& text) override;
    int dim() const override { return dim_; }
    BackendDescriptor descriptor() const override;

private:
    int dim_;
    std::uint64_t seed_;
    std::vector<double> projection_; // dim_ x (16*16*3), row-major
};

struct ChatMessage {
    std::string role;
    std::string content;
};

// Defaults follow the prompt-sampling hyperparameters.
struct ChatParams {
    double temperature = 1.0;
    double top_p = 1.0;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages, const ChatParams& params) = 0;
    virtual BackendDescriptor descriptor() const = 0;
};

// Validates inputs, then delegates to the provider.
std::string chat_complete(const std::vector<ChatMessage>& messages, const ChatParams& params,
                          ChatBackend& provider);

// Deterministic chat provider. Reads the "Target class:" / "Prompt index:"
// markers from the request and templates one sentence around them; the full
// request content is hashed so retries with changed content vary the output.
class MockChatBackend : public ChatBackend {
public:
    explicit MockChatBackend(std::uint64_t seed = 0) : seed_(seed) {}

    std::string complete(const std::vector<ChatMessage>& messages, const ChatParams& params) override;
    BackendDescriptor descriptor() const override;

private:
    std::uint64_t seed_;
};

struct RetryPolicy {
    int attempts = 3;
    int initial_backoff_ms = 500; // doubles per attempt
};

// HTTP adapters speaking the minimal wire contract; see the README for the
// request/response shapes. DALDA_API_KEY, when set, is sent as a bearer token.
class RemoteEmbeddingBackend : public EmbeddingBackend {
public:
    RemoteEmbeddingBackend(std::string endpoint, std::string model_id, int dim,
                           RetryPolicy retry = {});

    EmbeddingVector embed_image(const Image& image) override;
    EmbeddingVector embed_text(const std::string& text) override;
    int dim() const override { return dim_; }
    BackendDescriptor descriptor() const override;

private:
    EmbeddingVector request_embedding(const std::string& kind, const std::string& payload);

    std::string endpoint_;
    std::string model_id_;
    int dim_;
    RetryPolicy retry_;
};

class RemoteChatBackend : public ChatBackend {
public:
    RemoteChatBackend(std::string endpoint, std::string model_id, RetryPolicy retry = {});

    std::string complete(const std::vector<ChatMessage>& messages, const ChatParams& params) override;
    BackendDescriptor descriptor() const override;

private:
    std::string endpoint_;
    std::string model_id_;
    RetryPolicy retry_;
};

std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view data);

} // namespace dalda::backends
