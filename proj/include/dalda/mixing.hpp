#pragma once

#include "dalda/backends.hpp"
#include "dalda/image.hpp"
#include "dalda/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dalda::mixing {

struct MixConfig {
    double synthetic_probability = 0.5;
    int epochs = 50;
    int batch_size = 32;
    int image_size = 224; // advisory for external trainers; probe embeds as-is
    double learning_rate = 0.0002;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PoolItem {
    std::string id;
    Image image;
    int class_id = 0;
};

// Bernoulli(p) pool choice, then a uniform element of the chosen pool.
class MixedSampler {
  public:
    MixedSampler(const std::vector<PoolItem>* real, const std::vector<PoolItem>* synthetic,
                 double p, Rng rng);

    struct Draw {
        const PoolItem* item;
        bool synthetic;
    };
    Draw next();

    std::size_t real_size() const { return real_ ? real_->size() : 0; }
    std::size_t synthetic_size() const { return synthetic_ ? synthetic_->size() : 0; }

  private:
    const std::vector<PoolItem>* real_;
    const std::vector<PoolItem>* synthetic_;
    double p_;
    Rng rng_;
};

MixedSampler mixed_sampler(const std::vector<PoolItem>& real,
                           const std::vector<PoolItem>& synthetic, double p, Rng rng);

// Multinomial logistic probe over frozen embeddings. Weights include a
// trailing bias column; rows follow class_ids order.
struct LinearProbe {
    Eigen::MatrixXd weights;    // n_classes x (dim + 1)
    std::vector<int> class_ids; // row index -> class id, ascending

    int predict(const backends::EmbeddingVector& v) const;
    bool knows_class(int class_id) const;
};

// Plain gradient descent from zero weights; one epoch is
// ceil((|real|+|synthetic|) / batch_size) batches off the mixed stream.
LinearProbe train_linear_probe(MixedSampler& sampler, backends::EmbeddingBackend& backend,
                               const MixConfig& config);

// Top-1 accuracy; test items with class ids the probe never saw count as
// wrong (warned once per class).
double evaluate_accuracy(const LinearProbe& model, const std::vector<PoolItem>& test_set,
                         backends::EmbeddingBackend& backend);

} // namespace dalda::mixing
