#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"
#include "gnndiar/linalg.hpp"
#include "gnndiar/refiner.hpp"
#include "gnndiar/session_graph.hpp"

namespace gnndiar {

/// Symmetric, nonnegative, unit-diagonal affinity.
struct AffinityForClustering {
    Matrix s;
    Eigen::Index size() const { return s.rows(); }
};

inline AffinityForClustering sanitize_affinity(const Matrix& a) {
    if (!is_symmetric(a, 1e-9)) throw UsageError("affinity matrix is not symmetric");
    AffinityForClustering out{a.cwiseMax(0.0)};
    out.s.diagonal().setOnes();
    return out;
}

inline int count_from_eigenvalues(const Vector& eigenvalues, double tau) {
    const auto above = (eigenvalues.array() > tau).count();
    return std::max<int>(1, static_cast<int>(above));
}

/// Number of affinity eigenvalues strictly above `tau`, at least 1.
inline int count_speakers_threshold(const AffinityForClustering& s, double tau) {
    if (!(tau > 0.0)) throw ConfigError("count threshold must be positive");
    if (s.size() == 0) return 1;
    return count_from_eigenvalues(symmetric_eigenvalues(s.s), tau);
}

inline int default_max_speakers(Eigen::Index n) { return static_cast<int>(std::min<Eigen::Index>(n - 1, 20)); }

/// Position of the largest gap among the top max_k + 1 eigenvalues
/// (descending); first maximum wins ties.
inline int eigengap_from_eigenvalues(const Vector& ascending, int max_k) {
    const auto n = ascending.size();
    if (n <= 1) return 1;
    if (max_k < 1 || max_k >= n) throw ConfigError("eigengap max_k must lie in [1, N)");
    int best = 1;
    double best_gap = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= max_k; ++i) {
        const double gap = ascending[n - i] - ascending[n - i - 1];
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

inline int count_speakers_eigengap(const AffinityForClustering& s, int max_k) {
    if (s.size() <= 1) return 1;
    return eigengap_from_eigenvalues(symmetric_eigenvalues(s.s), max_k);
}

struct KMeansResult {
    std::vector<int> labels;
    double inertia = 0.0;
    int iterations = 0;
};

/// Lloyd's k-means with greedy farthest-point seeding. The first centre is the
/// seeded random row; every further centre is the row farthest from the chosen set.
inline KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter = 300, double tol = 1e-6) {
    const Eigen::Index n = points.rows();
    if (k < 1 || k > n) throw ConfigError("k-means needs 1 <= k <= N");
    std::mt19937_64 rng(seed);
    Matrix centers(k, points.cols());
    centers.row(0) = points.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
    Vector nearest = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        Eigen::Index far = 0;
        nearest.maxCoeff(&far);
        centers.row(c) = points.row(far);
        nearest = nearest.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    KMeansResult r;
    r.labels.assign(static_cast<std::size_t>(n), 0);
    Vector dist(n);
    double prev = std::numeric_limits<double>::infinity();
    for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
        r.inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            dist[i] = (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
            r.labels[i] = static_cast<int>(best);
            r.inertia += dist[i];
        }
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(r.labels[i]) += points.row(i);
            ++counts[r.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centers.row(c) = sums.row(c) / counts[c];
                continue;
            }
            // Empty cluster: steal the point worst served by its centre.
            Eigen::Index far = 0;
            dist.maxCoeff(&far);
            centers.row(c) = points.row(far);
            dist[far] = 0.0;
            prev = std::numeric_limits<double>::infinity();
        }
        if (std::isfinite(prev) && prev - r.inertia <= tol * std::max(prev, std::numeric_limits<double>::min())) break;
        prev = r.inertia;
    }
    r.iterations = std::min(r.iterations, max_iter);
    return r;
}

/// Relabels to dense [0, k) in order of first appearance.
inline DiarizationHypothesis dense_hypothesis(const std::vector<int>& raw) {
    DiarizationHypothesis h;
    std::vector<std::pair<int, int>> seen;
    for (int v : raw) {
        auto it = std::find_if(seen.begin(), seen.end(), [v](const auto& p) { return p.first == v; });
        if (it == seen.end()) {
            seen.emplace_back(v, static_cast<int>(seen.size()));
            h.labels.push_back(seen.back().second);
        } else {
            h.labels.push_back(it->second);
        }
    }
    h.k = static_cast<int>(seen.size());
    return h;
}

/// Normalized spectral clustering: k smallest eigenvectors of
/// I - D^-1/2 S D^-1/2, row-normalized, then k-means.
inline DiarizationHypothesis spectral_cluster(const AffinityForClustering& s, int k, std::uint64_t seed) {
    const Eigen::Index n = s.size();
    if (k < 1 || k > n)
        throw ConfigError("requested " + std::to_string(k) + " clusters for " + std::to_string(n) + " segments");
    if (k == 1) return {std::vector<int>(static_cast<std::size_t>(n), 0), 1};

    const Vector inv_sqrt_deg = s.s.rowwise().sum().array().rsqrt();
    const Matrix lap = Matrix::Identity(n, n) - inv_sqrt_deg.asDiagonal() * s.s * inv_sqrt_deg.asDiagonal();
    const auto eig = symmetric_eigen(lap);
    Matrix embed = eig.vectors.leftCols(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = embed.row(i).norm();
        if (norm > 0.0) embed.row(i) /= norm;
    }
    return dense_hypothesis(kmeans(embed, k, seed).labels);
}

enum class CountMethod { threshold, eigengap };

inline std::string to_string(CountMethod m) { return m == CountMethod::threshold ? "threshold" : "eigengap"; }

struct DiarizeConfig {
    double edge_threshold = kDefaultEdgeThreshold;
    CountMethod method = CountMethod::threshold;
    double count_threshold = 2.0;
    int max_speakers = 20;  // eigengap search cap, further limited to N - 1
    std::uint64_t seed = 0;
};

/// Sanitized affinity the count and clustering stages see: cosine of the raw
/// embeddings without a model, the model's scorer over refined embeddings with one.
inline AffinityForClustering session_affinity(const Matrix& x, const RefinerModel* model, double edge_threshold) {
    if (!model) return sanitize_affinity(pairwise_cosine(x));
    const auto graph = build_cosine_graph(x, edge_threshold);
    return sanitize_affinity(refined_affinity(*model, refine(*model, graph)));
}

inline int estimate_speaker_count(const Vector& eigenvalues, const DiarizeConfig& cfg) {
    const auto n = eigenvalues.size();
    if (n <= 1) return 1;
    if (cfg.method == CountMethod::threshold) return count_from_eigenvalues(eigenvalues, cfg.count_threshold);
    return eigengap_from_eigenvalues(eigenvalues, std::min<int>(cfg.max_speakers, default_max_speakers(n)));
}

inline DiarizationHypothesis diarize_affinity(const AffinityForClustering& s, const DiarizeConfig& cfg) {
    if (s.size() == 0) return {};
    if (s.size() == 1) return {{0}, 1};
    if (cfg.method == CountMethod::threshold && !(cfg.count_threshold > 0.0))
        throw ConfigError("count threshold must be positive");
    const int k = estimate_speaker_count(symmetric_eigenvalues(s.s), cfg);
    return spectral_cluster(s, k, cfg.seed);
}

inline DiarizationHypothesis diarize(const Matrix& x, const RefinerModel* model, const DiarizeConfig& cfg) {
    if (x.rows() == 0) return {};
    if (x.rows() == 1) return {{0}, 1};
    if (model && model->input_dim() != x.cols())
        throw ConfigError("model input dim " + std::to_string(model->input_dim()) + " does not match embedding dim " +
                          std::to_string(x.cols()));
    return diarize_affinity(session_affinity(x, model, cfg.edge_threshold), cfg);
}

}  // namespace gnndiar
