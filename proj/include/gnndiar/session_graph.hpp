#pragma once

#include <cmath>
#include <string>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/linalg.hpp"

namespace gnndiar {

inline constexpr double kDefaultEdgeThreshold = 0.2;

/// Thresholded, symmetric, zero-diagonal affinity graph of one session.
struct SessionGraph {
    Matrix features;  // N x D node features
    Matrix affinity;  // N x N, 0 means no edge
    double edge_threshold = kDefaultEdgeThreshold;

    Eigen::Index node_count() const { return affinity.rows(); }
};

/// Row-wise cosine similarity. Throws DegenerateInputError naming the first zero-norm row.
inline Matrix pairwise_cosine(const Matrix& x) {
    Vector inv_norm(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        if (!(n > 0.0)) throw DegenerateInputError("row " + std::to_string(i) + " has zero norm");
        inv_norm[i] = 1.0 / n;
    }
    const Matrix u = inv_norm.asDiagonal() * x;
    Matrix c = u * u.transpose();
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        c(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < c.cols(); ++j) {
            const double v = std::clamp(0.5 * (c(i, j) + c(j, i)), -1.0, 1.0);
            c(i, j) = v;
            c(j, i) = v;
        }
    }
    return c;
}

/// Keeps score entries strictly above `threshold` off the diagonal.
/// Asymmetric scores are averaged with their transpose first.
inline SessionGraph build_session_graph(const Matrix& features, const Matrix& scores, double threshold) {
    if (scores.rows() != scores.cols() || scores.rows() != features.rows())
        throw UsageError("score matrix does not match the node count");
    if (!(threshold >= 0.0)) throw ConfigError("edge threshold must be nonnegative");
    const Matrix sym = 0.5 * (scores + scores.transpose());
    SessionGraph g{features, Matrix::Zero(sym.rows(), sym.cols()), threshold};
    for (Eigen::Index i = 0; i < sym.rows(); ++i)
        for (Eigen::Index j = 0; j < sym.cols(); ++j)
            if (i != j && sym(i, j) > threshold) g.affinity(i, j) = sym(i, j);
    return g;
}

/// Cosine-weighted graph, the default for d-vector style embeddings.
inline SessionGraph build_cosine_graph(const Matrix& features, double threshold = kDefaultEdgeThreshold) {
    return build_session_graph(features, pairwise_cosine(features), threshold);
}

/// Symmetric normalized propagation matrix D^-1/2 (A + I) D^-1/2.
inline Matrix propagation_matrix(const SessionGraph& g) {
    const Eigen::Index n = g.node_count();
    Matrix a_hat = g.affinity + Matrix::Identity(n, n);
    const Vector inv_sqrt_deg = a_hat.rowwise().sum().array().rsqrt();
    return inv_sqrt_deg.asDiagonal() * a_hat * inv_sqrt_deg.asDiagonal();
}

}  // namespace gnndiar
