#pragma once

// Central finite-difference check of the full pipeline
// X -> GCN encoder -> scorer -> loss against the analytic backward().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/losses.hpp"
#include "gnndiar/refiner.hpp"
#include "gnndiar/session_graph.hpp"

namespace gnndiar {

struct GradcheckCase {
    int nodes = 12;
    int input_dim = 8;
    int hidden_dim = 8;
    int output_dim = 8;
    ScorerKind scorer = ScorerKind::cosine;
    LossConfig loss;
    std::uint64_t seed = 0;
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t parameters_checked = 0;
    // Stencils that straddled a histogram node, clamp boundary or ELU kink and
    // were re-differenced from a smaller step.
    std::size_t step_reductions = 0;
};

// Initial step of the extrapolation; stencils crossing a kink restart 4x smaller.
inline constexpr double kGradcheckStep = 1e-3;
// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kGradcheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
}

namespace detail {

// Identifies the smooth piece of the loss the affinity sits in: histogram
// node interval or clamp state of every pair.
inline std::vector<int> loss_piece(const Matrix& a, const LossConfig& cfg) {
    std::vector<int> key;
    key.reserve(static_cast<std::size_t>(a.size()));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (i == j) continue;
            const double v = a(i, j);
            if (cfg.kind == LossKind::bce) {
                key.push_back(v <= kBceClamp ? -1 : (v >= 1.0 - kBceClamp ? 1 : 0));
            } else {
                const double x = (v - cfg.lo) / ((cfg.hi - cfg.lo) / (cfg.bins - 1));
                key.push_back(v < cfg.lo ? -1 : (v > cfg.hi ? cfg.bins : static_cast<int>(std::floor(x))));
            }
        }
    return key;
}

// Sign pattern of every FC hidden pre-activation; ELU's second derivative jumps at 0.
inline void append_scorer_piece(const RefinerModel& model, const Matrix& z, std::vector<int>& key) {
    if (model.scorer != ScorerKind::fc_pair) return;
    const auto& fc = *model.params.fc;
    const Eigen::Index d = z.cols();
    const Matrix left = z * fc.hidden_w.leftCols(d).transpose();
    const Matrix right = z * fc.hidden_w.rightCols(d).transpose();
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            if (i == j) continue;
            for (Eigen::Index h = 0; h < fc.hidden_w.rows(); ++h)
                key.push_back(left(i, h) + right(j, h) + fc.hidden_b[h] > 0.0 ? 1 : 0);
        }
}

// Ridders' extrapolation of central differences over shrinking steps,
// returning the tableau entry with the smallest error estimate. Stops once the
// estimate is far below the check tolerance.
template <class Central>
double ridders(const Central& central, double h) {
    constexpr int kTable = 8;
    constexpr double kShrink = 1.4;
    constexpr double kShrink2 = kShrink * kShrink;
    double tab[kTable][kTable];
    tab[0][0] = central(h);
    double best = tab[0][0];
    double err = std::numeric_limits<double>::infinity();
    for (int i = 1; i < kTable; ++i) {
        h /= kShrink;
        tab[0][i] = central(h);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
            tab[j][i] = (tab[j - 1][i] * fac - tab[j - 1][i - 1]) / (fac - 1.0);
            fac *= kShrink2;
            const double e = std::max(std::abs(tab[j][i] - tab[j - 1][i]), std::abs(tab[j][i] - tab[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = tab[j][i];
            }
        }
        if (err <= 1e-9 * std::max(std::abs(best), 1e-6)) break;
        if (std::abs(tab[i][i] - tab[i - 1][i - 1]) >= 2.0 * err) break;
    }
    return best;
}

}  // namespace detail

struct GradcheckInstance {
    Matrix x;
    Matrix propagation;
    GroundTruthAdjacency truth;
    RefinerModel model;
};

inline GradcheckInstance make_gradcheck_instance(const GradcheckCase& c) {
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int speakers = std::max(2, c.nodes / 4);
    // Loose clusters so the graph has some edges and both pair classes exist.
    Matrix centroids(speakers, c.input_dim);
    for (Eigen::Index i = 0; i < centroids.size(); ++i) centroids.data()[i] = gauss(rng);
    std::vector<int> labels(c.nodes);
    for (int i = 0; i < c.nodes; ++i) labels[i] = i < 2 * speakers ? i % speakers : static_cast<int>(rng() % speakers);
    GradcheckInstance inst;
    inst.x.resize(c.nodes, c.input_dim);
    for (int i = 0; i < c.nodes; ++i)
        for (int j = 0; j < c.input_dim; ++j) inst.x(i, j) = centroids(labels[i], j) + 0.7 * gauss(rng);
    inst.propagation = propagation_matrix(build_cosine_graph(inst.x));
    inst.truth = adjacency_from_labels(labels);
    const std::vector<int> dims{c.input_dim, c.hidden_dim, c.output_dim};
    inst.model = init_model(std::span<const int>(dims), c.scorer, c.seed ^ 0x9e3779b97f4a7c15ull);
    return inst;
}

inline double pipeline_loss(const GradcheckInstance& inst, const RefinerModel& model, const LossConfig& cfg,
                            std::vector<int>* piece = nullptr) {
    const auto pass = gcn_forward(model, inst.propagation, inst.x);
    const Matrix a = refined_affinity(model, pass.z);
    if (piece) {
        *piece = detail::loss_piece(a, cfg);
        detail::append_scorer_piece(model, pass.z, *piece);
    }
    return compute_loss(a, inst.truth, cfg).value;
}

inline GradcheckResult check_pipeline_gradients(const GradcheckCase& c) {
    const auto inst = make_gradcheck_instance(c);
    const auto pass = gcn_forward(inst.model, inst.propagation, inst.x);
    const Matrix a = refined_affinity(inst.model, pass.z);
    const auto loss = compute_loss(a, inst.truth, c.loss);
    const auto grads = backward(inst.model, pass, loss.grad);

    std::vector<int> base_piece;
    pipeline_loss(inst, inst.model, c.loss, &base_piece);

    GradcheckResult result;
    RefinerModel probe = inst.model;
    auto params = probe.params.views();
    const auto analytic = grads.views();
    std::vector<int> piece;
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double original = params[b][i];
            double h = kGradcheckStep;
            double numeric = 0.0;
            for (int attempt = 0;; ++attempt) {
                bool same_piece = true;
                const auto central = [&](double step) {
                    params[b][i] = original + step;
                    const double up = pipeline_loss(inst, probe, c.loss, &piece);
                    same_piece = same_piece && piece == base_piece;
                    params[b][i] = original - step;
                    const double down = pipeline_loss(inst, probe, c.loss, &piece);
                    same_piece = same_piece && piece == base_piece;
                    return (up - down) / (2.0 * step);
                };
                numeric = detail::ridders(central, h);
                if (same_piece || attempt == 8) break;
                h *= 0.25;
                ++result.step_reductions;
            }
            params[b][i] = original;
            result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[b][i], numeric));
            ++result.parameters_checked;
        }
    return result;
}

/// Random small instances (N <= 12, D <= 8) cycling both scorers and both losses.
inline std::vector<GradcheckCase> gradcheck_suite(int instances, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> nodes(5, 12);
    std::uniform_int_distribution<int> dim(2, 8);
    std::vector<GradcheckCase> cases;
    for (int k = 0; k < instances; ++k) {
        GradcheckCase base;
        base.nodes = nodes(rng);
        base.input_dim = dim(rng);
        base.hidden_dim = dim(rng);
        base.output_dim = dim(rng);
        base.seed = rng();
        for (auto scorer : {ScorerKind::fc_pair, ScorerKind::cosine})
            for (auto kind : {LossKind::bce, LossKind::hist_plus_nuclear}) {
                GradcheckCase c = base;
                c.scorer = scorer;
                c.loss.kind = kind;
                c.loss.alpha = 0.5;
                cases.push_back(c);
            }
    }
    return cases;
}

}  // namespace gnndiar
