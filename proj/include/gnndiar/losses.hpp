#pragma once

// Pairwise linkage losses on a refined affinity matrix, their analytic
// gradients, reverse-mode backprop through the scorer and encoder, and Adam.
//
// Pairwise losses iterate over ordered pairs i != j. On a symmetric affinity
// this is the same value as iterating over unordered pairs; it makes the
// gradient with respect to each matrix entry well defined when the caller
// perturbs a single entry.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"
#include "gnndiar/linalg.hpp"
#include "gnndiar/refiner.hpp"

namespace gnndiar {

enum class LossKind { bce, hist_plus_nuclear };

inline std::string to_string(LossKind k) { return k == LossKind::bce ? "bce" : "hist_plus_nuclear"; }

struct LossConfig {
    LossKind kind = LossKind::hist_plus_nuclear;
    double alpha = 0.01;
    int bins = 150;
    double lo = -1.0;
    double hi = 1.0;

    void check() const {
        if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
        if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
        if (!(lo < hi)) throw ConfigError("histogram range must satisfy lo < hi");
    }
};

struct LossValue {
    double value = 0.0;
    Matrix grad;  // dL/dA, same shape as A
};

inline constexpr double kBceClamp = 1e-7;

inline void check_pair_shapes(const Matrix& a, const GroundTruthAdjacency& gt) {
    if (a.rows() != a.cols() || a.rows() != gt.size())
        throw UsageError("affinity is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " but ground truth is " + std::to_string(gt.size()) + "x" + std::to_string(gt.size()));
}

/// Mean binary cross entropy over off-diagonal pairs; scores clamped to [eps, 1 - eps].
inline LossValue bce_pairwise_loss(const Matrix& s, const GroundTruthAdjacency& gt) {
    check_pair_shapes(s, gt);
    const Eigen::Index n = s.rows();
    LossValue out{0.0, Matrix::Zero(n, n)};
    if (n < 2) return out;
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double raw = s(i, j);
            const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
            const double a = gt.values(i, j);
            out.value -= a * std::log(p) + (1.0 - a) * std::log1p(-p);
            if (raw > kBceClamp && raw < 1.0 - kBceClamp) out.grad(i, j) = (-a / p + (1.0 - a) / (1.0 - p)) / pairs;
        }
    out.value /= pairs;
    return out;
}

/// Triangular soft assignment of a value to its two neighbouring histogram nodes.
struct SoftBin {
    int lower = 0;       // node index; the value splits between lower and lower + 1
    double upper_weight = 0.0;
};

inline SoftBin soft_bin(double v, const LossConfig& cfg) {
    const double step = (cfg.hi - cfg.lo) / (cfg.bins - 1);
    const double x = (std::clamp(v, cfg.lo, cfg.hi) - cfg.lo) / step;
    const int lower = std::clamp(static_cast<int>(std::floor(x)), 0, cfg.bins - 2);
    return {lower, std::clamp(x - lower, 0.0, 1.0)};
}

/// Probability that a different-speaker pair scores above a same-speaker pair,
/// estimated from soft histograms of the two similarity populations.
inline LossValue histogram_loss(const Matrix& a, const GroundTruthAdjacency& gt, const LossConfig& cfg) {
    check_pair_shapes(a, gt);
    cfg.check();
    const Eigen::Index n = a.rows();
    const double step = (cfg.hi - cfg.lo) / (cfg.bins - 1);

    Vector pos_hist = Vector::Zero(cfg.bins);
    Vector neg_hist = Vector::Zero(cfg.bins);
    double pos_count = 0.0;
    double neg_count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto b = soft_bin(a(i, j), cfg);
            Vector& h = gt.values(i, j) > 0.5 ? pos_hist : neg_hist;
            (gt.values(i, j) > 0.5 ? pos_count : neg_count) += 1.0;
            h[b.lower] += 1.0 - b.upper_weight;
            h[b.lower + 1] += b.upper_weight;
        }
    if (pos_count == 0.0 || neg_count == 0.0)
        throw DegenerateInputError("histogram loss needs both same-speaker and different-speaker pairs");
    pos_hist /= pos_count;
    neg_hist /= neg_count;

    // loss = sum_r neg[r] * cdf_pos[r]
    Vector cdf_pos(cfg.bins);
    double acc = 0.0;
    for (int r = 0; r < cfg.bins; ++r) cdf_pos[r] = (acc += pos_hist[r]);
    // d loss / d pos[q] = sum_{r >= q} neg[r]
    Vector tail_neg(cfg.bins);
    acc = 0.0;
    for (int r = cfg.bins - 1; r >= 0; --r) tail_neg[r] = (acc += neg_hist[r]);

    LossValue out{neg_hist.dot(cdf_pos), Matrix::Zero(n, n)};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double v = a(i, j);
            if (v < cfg.lo || v > cfg.hi) continue;  // clamped region is flat
            const auto b = soft_bin(v, cfg);
            const bool positive = gt.values(i, j) > 0.5;
            const Vector& dh = positive ? tail_neg : cdf_pos;
            const double count = positive ? pos_count : neg_count;
            out.grad(i, j) = (dh[b.lower + 1] - dh[b.lower]) / (step * count);
        }
    return out;
}

/// Sum of singular values of (A - A_gt); gradient U V^T from its SVD.
inline LossValue nuclear_norm_loss(const Matrix& a, const GroundTruthAdjacency& gt) {
    check_pair_shapes(a, gt);
    const Matrix diff = a - gt.values;
    if (!diff.allFinite()) throw NumericError("nuclear norm input has non-finite entries");
    LossValue out;
    if (is_symmetric(diff, 0.0)) {
        // Symmetric case: singular values are |eigenvalues| and U V^T = Q sign(L) Q^T.
        const auto eig = symmetric_eigen(diff);
        out.value = eig.values.cwiseAbs().sum();
        const Vector sign = eig.values.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        out.grad = eig.vectors * sign.asDiagonal() * eig.vectors.transpose();
    } else {
        Eigen::BDCSVD<Matrix> svd(diff, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success) throw NumericError("SVD failed");
        out.value = svd.singularValues().sum();
        out.grad = svd.matrixU() * svd.matrixV().transpose();
    }
    return out;
}

inline LossValue combined_loss(const Matrix& a, const GroundTruthAdjacency& gt, const LossConfig& cfg) {
    if (cfg.kind != LossKind::hist_plus_nuclear) throw UsageError("combined_loss requires hist_plus_nuclear");
    auto hist = histogram_loss(a, gt, cfg);
    if (cfg.alpha == 0.0) return hist;
    const auto nuc = nuclear_norm_loss(a, gt);
    hist.value += cfg.alpha * nuc.value;
    hist.grad += cfg.alpha * nuc.grad;
    return hist;
}

inline LossValue compute_loss(const Matrix& a, const GroundTruthAdjacency& gt, const LossConfig& cfg) {
    return cfg.kind == LossKind::bce ? bce_pairwise_loss(a, gt) : combined_loss(a, gt, cfg);
}

namespace detail {

// dL/dZ through the row-wise cosine scorer.
inline Matrix cosine_backward(const Matrix& z, const Matrix& upstream) {
    const Vector norms = z.rowwise().norm();
    if ((norms.array() <= 0.0).any()) throw DegenerateOutputError("refined embedding collapsed to zero norm");
    const Vector inv = norms.cwiseInverse();
    const Matrix u = inv.asDiagonal() * z;
    const Matrix du = (upstream + upstream.transpose()) * u;
    const Vector radial = du.cwiseProduct(u).rowwise().sum();
    return inv.asDiagonal() * (du - radial.asDiagonal() * u);
}

// dL/dZ through the symmetrized FC scorer; accumulates FC parameter gradients into `fc_grad`.
inline Matrix fc_backward(const FcHead& fc, const Matrix& z, const Matrix& upstream, FcHead& fc_grad) {
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    const Eigen::Index hidden = fc.hidden_w.rows();
    const Matrix w_left = fc.hidden_w.leftCols(d);
    const Matrix w_right = fc.hidden_w.rightCols(d);
    const Matrix left = z * w_left.transpose();
    const Matrix right = z * w_right.transpose();
    Matrix d_left = Matrix::Zero(n, hidden);
    Matrix d_right = Matrix::Zero(n, hidden);
    Vector pre(hidden);
    Vector act(hidden);
    Vector dpre(hidden);

    auto ordered = [&](Eigen::Index a, Eigen::Index b, double upstream_score) {
        pre = (left.row(a) + right.row(b)).transpose() + fc.hidden_b;
        act = pre.unaryExpr(&elu);
        const double s = sigmoid(fc.out_w.dot(act) + fc.out_b);
        const double d_out = upstream_score * s * (1.0 - s);
        fc_grad.out_w += d_out * act;
        fc_grad.out_b += d_out;
        dpre = (d_out * fc.out_w).cwiseProduct(pre.unaryExpr(&elu_grad));
        fc_grad.hidden_b += dpre;
        d_left.row(a) += dpre.transpose();
        d_right.row(b) += dpre.transpose();
    };

    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            // S_ij = S_ji = (s(i,j) + s(j,i)) / 2
            const double g = 0.5 * (upstream(i, j) + upstream(j, i));
            if (g == 0.0) continue;
            ordered(i, j, g);
            ordered(j, i, g);
        }
    fc_grad.hidden_w.leftCols(d) += d_left.transpose() * z;
    fc_grad.hidden_w.rightCols(d) += d_right.transpose() * z;
    return d_left * w_left + d_right * w_right;
}

}  // namespace detail

/// Gradients of every model parameter given dL/dA for the affinity the
/// model's scorer produced from `pass.z`.
inline GradientSet backward(const RefinerModel& model, const ForwardPass& pass, const Matrix& d_affinity) {
    if (pass.model_revision != model.revision)
        throw UsageError("forward cache is stale: model changed since the forward pass");
    const Eigen::Index n = pass.z.rows();
    if (d_affinity.rows() != n || d_affinity.cols() != n) throw UsageError("upstream gradient shape mismatch");

    GradientSet grads = model.params.zeros_like();
    Matrix dh = model.scorer == ScorerKind::cosine
                    ? detail::cosine_backward(pass.z, d_affinity)
                    : detail::fc_backward(*model.params.fc, pass.z, d_affinity, *grads.fc);

    for (std::size_t k = model.params.gcn.size(); k-- > 0;) {
        grads.gcn[k] = dh.transpose() * pass.propagated[k];
        if (k > 0) dh = pass.propagation.transpose() * (dh * model.params.gcn[k]);
    }
    return grads;
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    ParameterSet first_moment;
    ParameterSet second_moment;
};

inline void adam_step(RefinerModel& model, const GradientSet& grads, double lr, AdamState& state) {
    if (!model.params.same_shape(grads)) throw UsageError("gradient shapes do not match the model");
    if (state.step == 0) {
        state.first_moment = model.params.zeros_like();
        state.second_moment = model.params.zeros_like();
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    auto params = model.params.views();
    const auto g = grads.views();
    auto m = state.first_moment.views();
    auto v = state.second_moment.views();
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            m[b][i] = state.beta1 * m[b][i] + (1.0 - state.beta1) * g[b][i];
            v[b][i] = state.beta2 * v[b][i] + (1.0 - state.beta2) * g[b][i] * g[b][i];
            params[b][i] -= lr * (m[b][i] / c1) / (std::sqrt(v[b][i] / c2) + state.eps);
        }
    ++model.revision;
}

}  // namespace gnndiar
