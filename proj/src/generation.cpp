#include "dalda/generation.hpp"

#include "dalda/errors.hpp"
#include "dalda/hash.hpp"
#include "dalda/util.hpp"
#include "post_json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

namespace dalda::generation {

using nlohmann::json;

void GenerationRequest::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw Error("generation request: lambda outside [0,1]: " + std::to_string(lambda));
    if (text_prompt.empty()) throw Error("generation request: empty prompt");
    if (image_size <= 0) throw Error("generation request: non-positive image size");
    if (guidance_scale <= 0.0) throw Error("generation request: non-positive guidance scale");
}

void AttentionWeights::validate() const {
    if (d_model <= 0 || d_head <= 0) throw Error("attention weights: non-positive dims");
    if (w_q.rows() != d_model) throw Error("attention weights: W_q rows != d_model");
    if (w_q.cols() != d_head || w_kt.cols() != d_head || w_ki.cols() != d_head)
        throw Error("attention weights: key/query projections must end in d_head");
    if (w_vt.cols() != w_vi.cols())
        throw Error("attention weights: text/image value widths differ");
    if (w_kt.rows() != w_vt.rows()) throw Error("attention weights: W_kt/W_vt rows differ");
    if (w_ki.rows() != w_vi.rows()) throw Error("attention weights: W_ki/W_vi rows differ");
}

Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v, int d_head) {
    if (q.cols() != k.cols()) throw Error("attention: query/key width mismatch");
    if (k.rows() != v.rows()) throw Error("attention: key/value row mismatch");
    if (d_head <= 0) throw Error("attention: non-positive d_head");

    Eigen::MatrixXd scores = q * k.transpose() / std::sqrt(static_cast<double>(d_head));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        double mx = scores.row(r).maxCoeff();
        Eigen::ArrayXd e = (scores.row(r).array() - mx).exp();
        scores.row(r) = (e / e.sum()).matrix();
    }
    return scores * v;
}

Eigen::MatrixXd decoupled_cross_attention(const Eigen::MatrixXd& z, const Eigen::MatrixXd& c_t,
                                          const Eigen::MatrixXd& c_i, const AttentionWeights& w,
                                          double lambda) {
    w.validate();
    if (z.cols() != w.w_q.rows()) throw Error("decoupled attention: Z width != W_q rows");
    if (c_t.cols() != w.w_kt.rows()) throw Error("decoupled attention: c_t width != W_kt rows");
    if (c_i.cols() != w.w_ki.rows()) throw Error("decoupled attention: c_i width != W_ki rows");

    Eigen::MatrixXd q = z * w.w_q;
    Eigen::MatrixXd out = attention(q, c_t * w.w_kt, c_t * w.w_vt, w.d_head);
    // Skipping the image branch at lambda == 0 keeps the text-only result
    // bit-identical to a plain text cross-attention.
    if (lambda != 0.0) out += lambda * attention(q, c_i * w.w_ki, c_i * w.w_vi, w.d_head);
    return out;
}

namespace {

Eigen::MatrixXd seeded_matrix(int rows, int cols, const std::string& tag, double scale) {
    Eigen::MatrixXd m(rows, cols);
    Rng rng(derive_seed(0, tag));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
    return m;
}

} // namespace

AttentionWeights default_toy_weights() {
    AttentionWeights w;
    w.d_model = kToyDim;
    w.d_head = kToyDim;
    double scale = 1.0 / std::sqrt(static_cast<double>(kToyDim));
    w.w_q = seeded_matrix(kToyDim, kToyDim, "toy-weights:wq", scale);
    w.w_kt = seeded_matrix(kToyDim, kToyDim, "toy-weights:wkt", scale);
    w.w_vt = seeded_matrix(kToyDim, kToyDim, "toy-weights:wvt", scale);
    w.w_ki = seeded_matrix(kToyDim, kToyDim, "toy-weights:wki", scale);
    w.w_vi = seeded_matrix(kToyDim, kToyDim, "toy-weights:wvi", scale);
    return w;
}

Eigen::MatrixXd toy_text_features(const std::string& prompt) {
    Eigen::MatrixXd m(kToyTokens, kToyDim);
    for (int t = 0; t < kToyTokens; ++t) {
        Rng rng(derive_seed(0, "toy-text:" + std::to_string(t) + ":" + prompt));
        for (int c = 0; c < kToyDim; ++c) m(t, c) = rng.normal();
    }
    return m;
}

Eigen::MatrixXd toy_image_features(const Image& source) {
    if (!source.valid()) throw Error("toy_image_features: invalid image");
    Eigen::MatrixXd m(kToyTokens, kToyDim);
    const int groups = (kToyDim + 2) / 3; // horizontal slices per band
    for (int b = 0; b < kToyTokens; ++b) {
        int r0 = source.height * b / kToyTokens;
        int r1 = std::max(r0 + 1, source.height * (b + 1) / kToyTokens);
        r0 = std::min(r0, source.height - 1);
        r1 = std::min(r1, source.height);
        for (int k = 0; k < kToyDim; ++k) {
            int channel = k % 3;
            int g = k / 3;
            int c0 = source.width * g / groups;
            int c1 = std::max(c0 + 1, source.width * (g + 1) / groups);
            c0 = std::min(c0, source.width - 1);
            c1 = std::min(c1, source.width);
            double sum = 0.0;
            int n = 0;
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) {
                    sum += source.at(r, c, channel);
                    ++n;
                }
            m(b, k) = (sum / n / 255.0 - 0.5) * 4.0; // roughly unit scale
        }
    }
    return m;
}

Eigen::MatrixXd toy_queries() {
    Eigen::MatrixXd m(kToyQueries, kToyDim);
    for (int qrow = 0; qrow < kToyQueries; ++qrow) {
        Rng rng(derive_seed(0, "toy-query:" + std::to_string(qrow)));
        for (int c = 0; c < kToyDim; ++c) m(qrow, c) = rng.normal();
    }
    return m;
}

Image render_features(const Eigen::MatrixXd& z) {
    if (z.rows() != kToyQueries || z.cols() != kToyDim)
        throw Error("render_features: expected 64x16 features");
    Image img = Image::filled(kToyImageSize, kToyImageSize, 0, 0, 0);
    for (int qrow = 0; qrow < kToyQueries; ++qrow) {
        int br = qrow / 8 * 8;
        int bc = qrow % 8 * 8;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                int dim = (r % 4) * 4 + (c % 4);
                double v = 128.0 + 40.0 * z(qrow, dim);
                auto px = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
                for (int ch = 0; ch < 3; ++ch) img.at(br + r, bc + c, ch) = px;
            }
    }
    return img;
}

Image toy_generate(const GenerationRequest& request, const Image& source,
                   const AttentionWeights& weights) {
    request.validate();
    Eigen::MatrixXd z = decoupled_cross_attention(
        toy_queries(), toy_text_features(request.text_prompt),
        toy_image_features(source), weights, request.lambda);
    return render_features(z);
}

Image toy_source_rendering(const Image& source, const AttentionWeights& weights) {
    weights.validate();
    Eigen::MatrixXd q = toy_queries() * weights.w_q;
    Eigen::MatrixXd c_i = toy_image_features(source);
    return render_features(attention(q, c_i * weights.w_ki, c_i * weights.w_vi, weights.d_head));
}

Image ToyDiffusionBackend::generate(const Image& source, const GenerationRequest& request) {
    return toy_generate(request, source, weights_);
}

backends::BackendDescriptor ToyDiffusionBackend::descriptor() const {
    return {backends::BackendDescriptor::Kind::diffusion, "toy-diffusion-v1", std::nullopt, true};
}

RemoteDiffusionBackend::RemoteDiffusionBackend(std::string endpoint, std::string model_id,
                                               backends::RetryPolicy retry)
    : endpoint_(std::move(endpoint)), model_id_(std::move(model_id)), retry_(retry) {}

Image RemoteDiffusionBackend::generate(const Image& source, const GenerationRequest& request) {
    request.validate();
    json body = {{"image", backends::base64_encode(encode_ppm(source))},
                 {"prompt", request.text_prompt},
                 {"ip_adapter_scale", request.lambda},
                 {"guidance_scale", request.guidance_scale},
                 {"width", request.image_size},
                 {"height", request.image_size},
                 {"seed", request.seed},
                 {"model_id", model_id_}};
    for (const auto& [k, v] : request.extras) body[k] = v;
    json res = backends::post_json(endpoint_, body, retry_);
    if (!res.contains("image") || !res["image"].is_string())
        throw BackendError(BackendError::Kind::malformed, "diffusion response missing image");
    return decode_ppm(backends::base64_decode(res["image"].get<std::string>()));
}

backends::BackendDescriptor RemoteDiffusionBackend::descriptor() const {
    return {backends::BackendDescriptor::Kind::diffusion, model_id_, endpoint_, false};
}

const char* to_string(LambdaPolicy p) {
    switch (p) {
    case LambdaPolicy::ags: return "ags";
    case LambdaPolicy::random_scaling: return "random_scaling";
    case LambdaPolicy::fixed: return "fixed";
    }
    return "ags";
}

LambdaPolicy lambda_policy_from_string(const std::string& s) {
    if (s == "ags") return LambdaPolicy::ags;
    if (s == "random_scaling" || s == "rs") return LambdaPolicy::random_scaling;
    if (s == "fixed") return LambdaPolicy::fixed;
    throw Error("unknown lambda policy: " + s);
}

namespace {

std::string sanitize_id(const std::string& id) {
    std::string out;
    for (char raw : id) {
        auto c = static_cast<unsigned char>(raw);
        out += std::isalnum(c) ? static_cast<char>(c) : '_';
    }
    return out;
}

struct ExampleTask {
    const dataset::LabeledImage* entry;
    const scoring::ClipScoreRecord* score;
    const prompting::PromptSet* prompts;
};

} // namespace

PipelineResult run_pipeline(const dataset::Catalog& catalog, const dataset::FewShotSplit& split,
                            const std::vector<scoring::ClipScoreRecord>& scores,
                            const std::map<std::string, prompting::PromptSet>& prompt_sets,
                            const ags::AgsConfig& ags_config, DiffusionBackend& backend,
                            dataset::ManifestWriter& manifest, const PipelineOptions& options) {
    if (options.m < 1) throw Error("pipeline: m must be >= 1");
    ags_config.validate();
    if (!(options.rs_min >= 0.0 && options.rs_max <= 1.0 && options.rs_min < options.rs_max))
        throw Error("pipeline: random-scaling range must satisfy 0 <= min < max <= 1");
    if (options.lambda_policy == LambdaPolicy::fixed &&
        !(options.fixed_lambda >= 0.0 && options.fixed_lambda <= 1.0))
        throw Error("pipeline: fixed lambda must lie in [0,1]");
    std::filesystem::create_directories(options.out_dir);

    // Resolve every example up front so missing inputs fail before any work.
    std::vector<ExampleTask> tasks;
    for (const auto& [cls, ids] : split.selected) {
        auto pit = prompt_sets.find(cls);
        if (pit == prompt_sets.end()) throw Error("pipeline: no prompt set for class " + cls);
        if (static_cast<int>(pit->second.prompts.size()) != options.m)
            throw Error("pipeline: class " + cls + " has " +
                        std::to_string(pit->second.prompts.size()) + " prompts, expected " +
                        std::to_string(options.m));
        for (const auto& id : ids) {
            const dataset::LabeledImage* entry = catalog.find(id);
            if (!entry) throw Error("pipeline: split references unknown image " + id);
            const scoring::ClipScoreRecord* score = nullptr;
            for (const auto& s : scores)
                if (s.image_id == id) score = &s;
            if (!score) throw Error("pipeline: no score record for image " + id);
            tasks.push_back({entry, score, &pit->second});
        }
    }

    const std::string model_id = backend.descriptor().model_id;
    PipelineResult result;

    auto process_example = [&](const ExampleTask& task) {
        std::vector<json> records;
        const std::string& image_id = task.entry->image_id;
        Image source = catalog.load_image(*task.entry);

        // Without-replacement prompt order for this example's m draws.
        std::vector<int> perm(static_cast<std::size_t>(options.m));
        std::iota(perm.begin(), perm.end(), 0);
        Rng perm_rng = rng_for(options.global_seed, image_id, 0, "prompt-perm");
        perm_rng.shuffle(perm);

        for (int draw = 0; draw < options.m; ++draw) {
            int prompt_index = perm[static_cast<std::size_t>(draw)];
            const std::string& prompt =
                task.prompts->prompts[static_cast<std::size_t>(prompt_index)];

            json lambda_info;
            double lambda = 0.0;
            if (options.lambda_policy == LambdaPolicy::ags) {
                Rng lrng = rng_for(options.global_seed, image_id,
                                   static_cast<std::uint64_t>(draw), "lambda");
                ags::LambdaSample s = ags::sample_lambda(*task.score, ags_config, lrng);
                lambda = s.value;
                lambda_info = {{"policy", "ags"}, {"value", s.value},   {"mu", s.mu},
                               {"sigma", s.sigma}, {"min", s.range_min}, {"max", s.range_max}};
            } else if (options.lambda_policy == LambdaPolicy::random_scaling) {
                Rng lrng = rng_for(options.global_seed, image_id,
                                   static_cast<std::uint64_t>(draw), "lambda");
                lambda = lrng.uniform(options.rs_min, options.rs_max);
                lambda_info = {{"policy", "random_scaling"},
                               {"value", lambda},
                               {"min", options.rs_min},
                               {"max", options.rs_max}};
            } else {
                lambda = options.fixed_lambda;
                lambda_info = {{"policy", "fixed"}, {"value", lambda}};
            }

            GenerationRequest req;
            req.source_image_id = image_id;
            req.text_prompt = prompt;
            req.lambda = lambda;
            req.guidance_scale = options.guidance_scale;
            req.image_size = options.image_size;
            req.seed = derive_seed(options.global_seed, image_id,
                                   static_cast<std::uint64_t>(draw), "gen");
            req.model_id = model_id;

            std::string out_name =
                sanitize_id(image_id) + "_" + std::to_string(draw) + ".ppm";
            std::filesystem::path out_path = options.out_dir / out_name;

            json rec = {{"kind", "generation"},
                        {"image_id", image_id + "#" + std::to_string(draw)},
                        {"source_image_id", image_id},
                        {"class_name", task.entry->class_name},
                        {"prompt_index", prompt_index},
                        {"prompt", prompt},
                        {"lambda", lambda_info},
                        {"group", scoring::to_string(task.score->group)},
                        {"clip_score_at_source", task.score->clip_score},
                        {"seed", req.seed},
                        {"guidance_scale", req.guidance_scale},
                        {"image_size", req.image_size},
                        {"model_id", model_id}};

            auto started = std::chrono::steady_clock::now();
            bool ok = false;
            std::string error;
            for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
                try {
                    Image img = backend.generate(source, req);
                    write_ppm_file(out_path, img);
                    ok = true;
                } catch (const BackendError& e) {
                    error = e.what();
                    if (!e.retryable()) break;
                }
            }
            auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - started)
                               .count();
            rec["wall_time_ms"] = elapsed;
            if (ok) {
                rec["status"] = "ok";
                rec["output_path"] = out_path.generic_string();
            } else {
                rec["status"] = "failed";
                rec["error"] = error;
            }
            records.push_back(std::move(rec));
        }
        return records;
    };

    // Bounded parallelism over examples. Records commit in task order, so the
    // manifest is deterministic regardless of scheduling; per-image RNG keeps
    // the drawn values independent of worker count.
    const int workers = std::max(1, options.workers);
    for (std::size_t base = 0; base < tasks.size(); base += static_cast<std::size_t>(workers)) {
        std::size_t count = std::min(static_cast<std::size_t>(workers), tasks.size() - base);
        std::vector<std::vector<json>> chunk(count);
        if (count == 1) {
            chunk[0] = process_example(tasks[base]);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(count);
            for (std::size_t i = 0; i < count; ++i)
                pool.emplace_back([&, i] {
                    try {
                        chunk[i] = process_example(tasks[base + i]);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            for (auto& t : pool) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        for (const auto& recs : chunk)
            for (const auto& rec : recs) {
                manifest.append(rec);
                if (rec["status"] == "ok")
                    result.generated++;
                else
                    result.failed++;
            }
    }
    return result;
}

} // namespace dalda::generation
