#pragma once

#include "dalda/ags.hpp"
#include "dalda/backends.hpp"
#include "dalda/dataset.hpp"
#include "dalda/prompting.hpp"
#include "dalda/scoring.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace dalda::generation {

struct GenerationRequest {
    std::string source_image_id;
    std::string text_prompt;
    double lambda = 0.0;
    double guidance_scale = 7.5;
    int image_size = 512;
    std::uint64_t seed = 0;
    std::string model_id;
    std::map<std::string, std::string> extras; // scheduler/steps etc., passed through opaquely

    void validate() const; // lambda in [0,1], non-empty prompt, positive size
};

// Projection weights for the two cross-attention branches.
struct AttentionWeights {
    Eigen::MatrixXd w_q;  // d_model x d_head
    Eigen::MatrixXd w_kt; // d_text x d_head
    Eigen::MatrixXd w_vt; // d_text x d_value
    Eigen::MatrixXd w_ki; // d_image x d_head
    Eigen::MatrixXd w_vi; // d_image x d_value
    int d_model = 0;
    int d_head = 0;

    void validate() const;
};

// rowsoftmax(Q Kᵀ / sqrt(d_head)) V
Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v, int d_head);

// Text-branch attention plus lambda times the image-branch attention. At
// lambda == 0 the image branch is skipped entirely, so the result is the
// text branch bit for bit.
Eigen::MatrixXd decoupled_cross_attention(const Eigen::MatrixXd& z, const Eigen::MatrixXd& c_t,
                                          const Eigen::MatrixXd& c_i, const AttentionWeights& w,
                                          double lambda);

// --- toy reference backend -------------------------------------------------
// 64x64 deterministic stand-in: 4 text tokens hashed from the prompt, 4 image
// tokens pooled from horizontal bands of the source, 64 queries (one per 8x8
// output block), all width 16.

inline constexpr int kToyDim = 16;
inline constexpr int kToyTokens = 4;
inline constexpr int kToyImageSize = 64;
inline constexpr int kToyQueries = 64;

AttentionWeights default_toy_weights();
Eigen::MatrixXd toy_text_features(const std::string& prompt);       // 4 x 16
Eigen::MatrixXd toy_image_features(const Image& source);            // 4 x 16
Eigen::MatrixXd toy_queries();                                      // 64 x 16
Image render_features(const Eigen::MatrixXd& z);                    // 64x16 -> 64x64 gray

Image toy_generate(const GenerationRequest& request, const Image& source,
                   const AttentionWeights& weights);

// Pixel rendering of the image branch alone; what lambda pulls outputs toward.
Image toy_source_rendering(const Image& source, const AttentionWeights& weights);

class DiffusionBackend {
  public:
    virtual ~DiffusionBackend() = default;
    virtual Image generate(const Image& source, const GenerationRequest& request) = 0;
    virtual backends::BackendDescriptor descriptor() const = 0;
};

class ToyDiffusionBackend : public DiffusionBackend {
  public:
    ToyDiffusionBackend() : weights_(default_toy_weights()) {}

    Image generate(const Image& source, const GenerationRequest& request) override;
    backends::BackendDescriptor descriptor() const override;

  private:
    AttentionWeights weights_;
};

// HTTP adapter; images travel base64-encoded (PPM bytes) and lambda rides the
// ip_adapter_scale field.
class RemoteDiffusionBackend : public DiffusionBackend {
  public:
    RemoteDiffusionBackend(std::string endpoint, std::string model_id,
                           backends::RetryPolicy retry = {});

    Image generate(const Image& source, const GenerationRequest& request) override;
    backends::BackendDescriptor descriptor() const override;

  private:
    std::string endpoint_;
    std::string model_id_;
    backends::RetryPolicy retry_;
};

// --- pipeline ----------------------------------------------------------------

enum class LambdaPolicy { ags, random_scaling, fixed };

const char* to_string(LambdaPolicy p);
LambdaPolicy lambda_policy_from_string(const std::string& s);

struct PipelineOptions {
    int m = 10;
    std::uint64_t global_seed = 0;
    std::filesystem::path out_dir;
    int workers = 1;
    double guidance_scale = 7.5;
    int image_size = 512;
    LambdaPolicy lambda_policy = LambdaPolicy::ags;
    double rs_min = 0.0; // random-scaling draw range
    double rs_max = 1.0;
    double fixed_lambda = 0.3; // used when lambda_policy == fixed
};

struct PipelineResult {
    int generated = 0;
    int failed = 0;
};

// For every selected example, emits exactly m synthetic images: lambda freshly
// sampled per draw, prompt indices a seeded without-replacement permutation of
// the class's m prompts. Failures retry 3x then mark the draw failed and
// continue. Records append to the manifest in deterministic example order.
PipelineResult run_pipeline(const dataset::Catalog& catalog, const dataset::FewShotSplit& split,
                            const std::vector<scoring::ClipScoreRecord>& scores,
                            const std::map<std::string, prompting::PromptSet>& prompt_sets,
                            const ags::AgsConfig& ags_config, DiffusionBackend& backend,
                            dataset::ManifestWriter& manifest, const PipelineOptions& options);

} // namespace dalda::generation
