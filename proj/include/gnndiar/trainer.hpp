#pragma once

// Session-batched training: one graph per optimizer step, Adam with a
// single step-decay of the learning rate.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnndiar/clustering.hpp"
#include "gnndiar/embedding_io.hpp"
#include "gnndiar/evaluation.hpp"
#include "gnndiar/losses.hpp"
#include "gnndiar/random.hpp"
#include "gnndiar/refiner.hpp"
#include "gnndiar/session_graph.hpp"

namespace gnndiar {

struct TrainConfig {
    int epochs = 50;
    double lr = 1e-3;
    int lr_drop_epoch = 40;
    double lr_drop_factor = 10.0;
    int folds = 5;
    double edge_threshold = kDefaultEdgeThreshold;
    LossConfig loss;
    std::uint64_t seed = 0;
    std::vector<int> dims{128, 128, 128};
    ScorerKind scorer = ScorerKind::cosine;
    int fc_hidden = kDefaultFcHidden;

    void check() const {
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (epochs > 0 && (lr_drop_epoch < 1 || lr_drop_epoch > epochs))
            throw ConfigError("lr drop epoch must lie in [1, epochs]");
        if (!(lr_drop_factor > 0.0)) throw ConfigError("lr drop factor must be positive");
        if (folds < 2) throw ConfigError("cross validation needs at least 2 folds");
        if (!(edge_threshold >= 0.0)) throw ConfigError("edge threshold must be nonnegative");
        loss.check();
    }

    /// Learning rate in effect during 1-based `epoch`.
    double lr_at(int epoch) const { return epoch > lr_drop_epoch ? lr / lr_drop_factor : lr; }
};

struct TrainingExample {
    Matrix x;
    GroundTruthAdjacency truth;
};

inline TrainingExample make_example(const EmbeddingMatrix& m) { return {m.values, adjacency_from_labels(m.labels())}; }

inline std::vector<TrainingExample> make_examples(std::span<const EmbeddingMatrix> sessions) {
    std::vector<TrainingExample> out;
    out.reserve(sessions.size());
    for (const auto& s : sessions) out.push_back(make_example(s));
    return out;
}

struct TrainReport {
    std::vector<double> epoch_loss;  // mean loss over trained sessions, one per epoch
    std::uint64_t checksum = 0;
    std::size_t skipped_sessions = 0;
};

struct TrainResult {
    RefinerModel model;
    TrainReport report;
};

/// Whether a session has a defined loss under `kind`.
inline bool trainable(const GroundTruthAdjacency& truth, LossKind kind) {
    const Eigen::Index n = truth.size();
    if (n < 2) return false;
    if (kind == LossKind::bce) return true;
    const double same_pairs = truth.values.sum() - static_cast<double>(n);
    const double all_pairs = static_cast<double>(n) * static_cast<double>(n - 1);
    return same_pairs > 0.0 && same_pairs < all_pairs;
}

using EpochCallback = std::function<void(int epoch, const RefinerModel&)>;

inline TrainResult train(std::span<const TrainingExample> sessions, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.check();
    if (sessions.empty()) throw TrainingError("no training sessions");

    struct Prepared {
        const TrainingExample* example;
        Matrix propagation;
    };
    std::vector<Prepared> prepared;
    TrainResult result;
    for (const auto& s : sessions) {
        if (s.x.cols() != cfg.dims.front())
            throw ConfigError("session embedding dim " + std::to_string(s.x.cols()) + " does not match model input " +
                              std::to_string(cfg.dims.front()));
        if (!trainable(s.truth, cfg.loss.kind)) {
            ++result.report.skipped_sessions;
            continue;
        }
        prepared.push_back({&s, propagation_matrix(build_cosine_graph(s.x, cfg.edge_threshold))});
    }
    if (prepared.empty()) throw TrainingError("every session is degenerate for the configured loss");

    result.model = init_model(std::span<const int>(cfg.dims), cfg.scorer, substream(cfg.seed, "init"), cfg.fc_hidden);
    AdamState adam;
    std::vector<std::size_t> order(prepared.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = cfg.lr_at(epoch);
        double total = 0.0;
        for (std::size_t idx : order) {
            const auto& p = prepared[idx];
            try {
                const auto pass = gcn_forward(result.model, p.propagation, p.example->x);
                const Matrix affinity = refined_affinity(result.model, pass.z);
                const auto loss = compute_loss(affinity, p.example->truth, cfg.loss);
                const auto grads = backward(result.model, pass, loss.grad);
                adam_step(result.model, grads, lr, adam);
                total += loss.value;
            } catch (const DegenerateOutputError& e) {
                throw TrainingError(std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
            }
        }
        result.report.epoch_loss.push_back(total / static_cast<double>(prepared.size()));
        if (on_epoch) on_epoch(epoch, result.model);
    }
    result.report.checksum = model_checksum(result.model);
    return result;
}

inline std::string train_report_csv(const TrainReport& r, const TrainConfig& cfg) {
    std::string out = "epoch,mean_loss,lr\n";
    char line[128];
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        std::snprintf(line, sizeof line, "%zu,%.10g,%.6g\n", e + 1, r.epoch_loss[e], cfg.lr_at(static_cast<int>(e + 1)));
        out += line;
    }
    return out;
}

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded partition of [0, n) into `folds` test sets whose sizes differ by at most one.
inline std::vector<FoldSplit> kfold_split(std::size_t n, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross validation needs at least 2 folds");
    if (n < static_cast<std::size_t>(folds))
        throw ConfigError("cannot split " + std::to_string(n) + " sessions into " + std::to_string(folds) + " folds");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    const auto f = static_cast<std::size_t>(folds);
    std::vector<FoldSplit> out(f);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < f; ++k) {
        const std::size_t size = n / f + (k < n % f ? 1 : 0);
        out[k].test.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                           perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
        std::sort(out[k].test.begin(), out[k].test.end());
    }
    for (std::size_t k = 0; k < f; ++k)
        for (std::size_t j = 0; j < f; ++j)
            if (j != k) out[k].train.insert(out[k].train.end(), out[j].test.begin(), out[j].test.end());
    for (auto& s : out) std::sort(s.train.begin(), s.train.end());
    return out;
}

/// Carves a deterministic validation subset (at least one session) from a training index set.
inline FoldSplit validation_split(std::span<const std::size_t> train, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> perm(train.begin(), train.end());
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(fraction * static_cast<double>(perm.size())), 1,
                                               perm.empty() ? 0 : perm.size() - (perm.size() > 1 ? 1 : 0));
    FoldSplit out;
    out.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(count));
    out.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(count), perm.end());
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.train.begin(), out.train.end());
    return out;
}

/// Candidate with the lowest mean |estimated - true| speaker count; ties go to the smaller threshold.
inline double tune_count_threshold(std::span<const SessionSpectrum> spectra, std::span<const double> candidates) {
    if (candidates.empty() || spectra.empty()) throw UsageError("threshold tuning needs candidates and sessions");
    const auto sweep = count_error_sweep(spectra, candidates);
    const SweepPoint* best = &sweep.front();
    for (const auto& p : sweep)
        if (p.mean_error < best->mean_error || (p.mean_error == best->mean_error && p.threshold < best->threshold))
            best = &p;
    return best->threshold;
}

inline double tune_count_threshold(const RefinerModel* model, std::span<const EmbeddingMatrix> validation,
                                   std::span<const double> candidates, double edge_threshold = kDefaultEdgeThreshold) {
    const auto spectra = session_spectra(validation, model, edge_threshold);
    return tune_count_threshold(std::span<const SessionSpectrum>(spectra), candidates);
}

}  // namespace gnndiar
