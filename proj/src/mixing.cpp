#include "dalda/mixing.hpp"

#include "dalda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

namespace dalda::mixing {

void MixConfig::validate() const {
    if (!(synthetic_probability >= 0.0 && synthetic_probability <= 1.0))
        throw Error("mix config: synthetic_probability outside [0,1]");
    if (epochs < 1) throw Error("mix config: epochs must be >= 1");
    if (batch_size < 1) throw Error("mix config: batch_size must be >= 1");
    if (image_size < 1) throw Error("mix config: image_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("mix config: learning_rate must be > 0");
}

MixedSampler::MixedSampler(const std::vector<PoolItem>* real,
                           const std::vector<PoolItem>* synthetic, double p, Rng rng)
    : real_(real), synthetic_(synthetic), p_(p), rng_(rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("mixed_sampler: p outside [0,1]");
    if (p > 0.0 && (synthetic_ == nullptr || synthetic_->empty()))
        throw Error("mixed_sampler: p > 0 requires a non-empty synthetic pool");
    if (p < 1.0 && (real_ == nullptr || real_->empty()))
        throw Error("mixed_sampler: p < 1 requires a non-empty real pool");
}

MixedSampler::Draw MixedSampler::next() {
    bool synthetic = rng_.uniform01() < p_;
    const std::vector<PoolItem>& pool = synthetic ? *synthetic_ : *real_;
    const PoolItem& item = pool[rng_.uniform_index(pool.size())];
    return {&item, synthetic};
}

MixedSampler mixed_sampler(const std::vector<PoolItem>& real,
                           const std::vector<PoolItem>& synthetic, double p, Rng rng) {
    return MixedSampler(&real, &synthetic, p, rng);
}

int LinearProbe::predict(const backends::EmbeddingVector& v) const {
    if (weights.cols() != static_cast<Eigen::Index>(v.dim()) + 1)
        throw Error("probe: embedding dim " + std::to_string(v.dim()) + " does not match model");
    Eigen::VectorXd x(weights.cols());
    for (std::size_t i = 0; i < v.dim(); ++i) x(static_cast<Eigen::Index>(i)) = v.values[i];
    x(weights.cols() - 1) = 1.0; // bias
    Eigen::VectorXd logits = weights * x;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return class_ids[static_cast<std::size_t>(best)];
}

bool LinearProbe::knows_class(int class_id) const {
    return std::find(class_ids.begin(), class_ids.end(), class_id) != class_ids.end();
}

LinearProbe train_linear_probe(MixedSampler& sampler, backends::EmbeddingBackend& backend,
                               const MixConfig& config) {
    config.validate();
    std::size_t pool_total = sampler.real_size() + sampler.synthetic_size();
    if (pool_total == 0) throw Error("train_linear_probe: both pools are empty");

    // One embedding per distinct pool item; the stream revisits items often.
    std::map<const PoolItem*, Eigen::VectorXd> embedded;
    auto embed = [&](const PoolItem* item) -> const Eigen::VectorXd& {
        auto it = embedded.find(item);
        if (it != embedded.end()) return it->second;
        backends::EmbeddingVector v = backend.embed_image(item->image);
        Eigen::VectorXd x(static_cast<Eigen::Index>(v.dim()) + 1);
        for (std::size_t i = 0; i < v.dim(); ++i) x(static_cast<Eigen::Index>(i)) = v.values[i];
        x(x.size() - 1) = 1.0;
        return embedded.emplace(item, std::move(x)).first->second;
    };

    const std::size_t batches_per_epoch =
        (pool_total + static_cast<std::size_t>(config.batch_size) - 1) /
        static_cast<std::size_t>(config.batch_size);

    // Materialize the drawn sequence first; training then consumes fixed
    // batches, so buffering cannot change the result.
    std::vector<const PoolItem*> drawn;
    drawn.reserve(batches_per_epoch * static_cast<std::size_t>(config.batch_size) *
                  static_cast<std::size_t>(config.epochs));
    std::set<int> class_set;
    for (int e = 0; e < config.epochs; ++e)
        for (std::size_t b = 0; b < batches_per_epoch; ++b)
            for (int i = 0; i < config.batch_size; ++i) {
                const PoolItem* item = sampler.next().item;
                class_set.insert(item->class_id);
                drawn.push_back(item);
            }

    if (class_set.size() < 2)
        std::cerr << "warning: training stream contains a single class; the probe will be "
                     "degenerate\n";

    LinearProbe model;
    model.class_ids.assign(class_set.begin(), class_set.end());
    std::map<int, Eigen::Index> row_of;
    for (std::size_t i = 0; i < model.class_ids.size(); ++i)
        row_of[model.class_ids[i]] = static_cast<Eigen::Index>(i);

    const Eigen::Index dim = static_cast<Eigen::Index>(backend.dim()) + 1;
    const Eigen::Index n_classes = static_cast<Eigen::Index>(model.class_ids.size());
    model.weights = Eigen::MatrixXd::Zero(n_classes, dim);

    std::size_t cursor = 0;
    for (int e = 0; e < config.epochs; ++e) {
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n_classes, dim);
            for (int i = 0; i < config.batch_size; ++i) {
                const PoolItem* item = drawn[cursor++];
                const Eigen::VectorXd& x = embed(item);
                Eigen::VectorXd logits = model.weights * x;
                double mx = logits.maxCoeff();
                Eigen::VectorXd probs = (logits.array() - mx).exp();
                probs /= probs.sum();
                probs(row_of[item->class_id]) -= 1.0; // dCE/dlogits
                grad += probs * x.transpose();
            }
            model.weights -= (config.learning_rate / config.batch_size) * grad;
        }
    }
    return model;
}

double evaluate_accuracy(const LinearProbe& model, const std::vector<PoolItem>& test_set,
                         backends::EmbeddingBackend& backend) {
    if (test_set.empty()) throw Error("evaluate_accuracy: empty test set");
    std::set<int> warned;
    std::size_t correct = 0;
    for (const auto& item : test_set) {
        if (!model.knows_class(item.class_id)) {
            if (warned.insert(item.class_id).second)
                std::cerr << "warning: test class id " << item.class_id
                          << " never seen in training; counting as wrong\n";
            continue;
        }
        backends::EmbeddingVector v = backend.embed_image(item.image);
        if (model.predict(v) == item.class_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

} // namespace dalda::mixing
