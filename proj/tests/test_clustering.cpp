#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "gnndiar/clustering.hpp"

using namespace gnndiar;

namespace {

Matrix two_block(std::mt19937_64& rng, const std::vector<int>& labels, double noise) {
    std::uniform_real_distribution<double> u(-noise, noise);
    const int n = static_cast<int>(labels.size());
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
            a(i, j) = a(j, i) = i == j ? 1.0 : (labels[i] == labels[j] ? 0.9 : 0.1) + u(rng);
    return a;
}

// Same partition up to renaming: equal co-membership matrices.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

// Exhaustive minimum normalized cut over all bipartitions.
std::vector<int> brute_ncut(const Matrix& s) {
    const int n = static_cast<int>(s.rows());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_labels;
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        if (mask & 1u) continue;  // fix node 0 on side 0
        double cut = 0.0, vol0 = 0.0, vol1 = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const bool si = mask >> i & 1u, sj = mask >> j & 1u;
                (si ? vol1 : vol0) += s(i, j);
                if (si != sj) cut += s(i, j);
            }
        const double ncut = cut / 2.0 / vol0 + cut / 2.0 / vol1;
        if (ncut < best) {
            best = ncut;
            best_labels.assign(n, 0);
            for (int i = 0; i < n; ++i) best_labels[i] = static_cast<int>(mask >> i & 1u);
        }
    }
    return best_labels;
}

}  // namespace

TEST(Sanitize, ClampsNegativesAndSetsDiagonal) {
    Matrix a(2, 2);
    a << 0.3, -0.4, -0.4, 0.7;
    const auto s = sanitize_affinity(a);
    EXPECT_EQ(s.s, Matrix::Identity(2, 2));
    a(0, 1) = 0.5;
    EXPECT_THROW(sanitize_affinity(a), UsageError);
}

TEST(ThresholdCount, Examples) {
    Vector ev(2);
    ev << 3.0, 5.0;
    EXPECT_EQ(count_from_eigenvalues(ev, 2.0), 2);
    EXPECT_EQ(count_speakers_threshold(sanitize_affinity(Matrix::Identity(4, 4)), 0.5), 4);
    EXPECT_EQ(count_speakers_threshold(sanitize_affinity(Matrix::Ones(6, 6)), 2.0), 1);
    EXPECT_EQ(count_speakers_threshold(sanitize_affinity(Matrix::Ones(6, 6)), 100.0), 1);
    EXPECT_THROW(count_speakers_threshold(sanitize_affinity(Matrix::Ones(2, 2)), 0.0), ConfigError);
}

TEST(ThresholdCount, MonotoneInThreshold) {
    std::mt19937_64 rng(1);
    std::vector<int> labels(12);
    for (int i = 0; i < 12; ++i) labels[i] = i % 3;
    const auto s = sanitize_affinity(two_block(rng, labels, 0.1));
    int prev = std::numeric_limits<int>::max();
    for (double tau = 0.25; tau < 15.0; tau += 0.25) {
        const int k = count_speakers_threshold(s, tau);
        EXPECT_LE(k, prev);
        EXPECT_GE(k, 1);
        prev = k;
    }
}

TEST(Eigengap, Examples) {
    Vector ev(4);
    ev << 0.05, 0.1, 3.9, 4.0;
    EXPECT_EQ(eigengap_from_eigenvalues(ev, 3), 2);
    Vector flat(3);
    flat << 1.0, 2.0, 3.0;
    EXPECT_EQ(eigengap_from_eigenvalues(flat, 2), 1);  // ties: first wins
    EXPECT_THROW(eigengap_from_eigenvalues(flat, 3), ConfigError);
    EXPECT_EQ(count_speakers_eigengap(sanitize_affinity(Matrix::Ones(1, 1)), 20), 1);
}

TEST(KMeans, SeparatedClusters) {
    Matrix p(6, 2);
    p << 0, 0, 0.1, 0, 0, 0.1, 5, 5, 5.1, 5, 5, 5.1;
    const auto r = kmeans(p, 2, 3);
    EXPECT_TRUE(same_partition(r.labels, {0, 0, 0, 1, 1, 1}));
    EXPECT_NEAR(r.inertia, 24.0 / 900.0, 1e-12);
    EXPECT_THROW(kmeans(p, 7, 1), ConfigError);
    EXPECT_THROW(kmeans(p, 0, 1), ConfigError);
}

TEST(DenseHypothesis, FirstAppearanceOrder) {
    const auto h = dense_hypothesis({7, 7, 2, 9, 2});
    EXPECT_EQ(h.labels, (std::vector<int>{0, 0, 1, 2, 1}));
    EXPECT_EQ(h.k, 3);
}

TEST(Spectral, RecoversBlocks) {
    std::mt19937_64 rng(2);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 0};
    const auto s = sanitize_affinity(two_block(rng, labels, 0.05));
    const auto h = spectral_cluster(s, 3, 1);
    EXPECT_EQ(h.k, 3);
    EXPECT_TRUE(same_partition(h.labels, labels));
    EXPECT_EQ(spectral_cluster(s, 1, 1).labels, std::vector<int>(11, 0));
    EXPECT_THROW(spectral_cluster(s, 12, 1), ConfigError);
    EXPECT_THROW(spectral_cluster(s, 0, 1), ConfigError);
}

TEST(Spectral, MatchesExhaustiveNormalizedCut) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 7);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = i < 2 ? i : static_cast<int>(rng() % 2);
        const auto s = sanitize_affinity(two_block(rng, labels, 0.08));
        const auto h = spectral_cluster(s, 2, 7);
        EXPECT_TRUE(same_partition(h.labels, brute_ncut(s.s))) << "trial " << trial;
    }
}

TEST(Spectral, PermutationInvariant) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 10 + static_cast<int>(rng() % 10);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = i % 3;
        const Matrix a = two_block(rng, labels, 0.05);
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
        for (int i = 0; i < n; ++i) p.indices()[i] = perm[i];
        const auto h = spectral_cluster(sanitize_affinity(a), 3, 1);
        const auto hp = spectral_cluster(sanitize_affinity(p * a * p.transpose()), 3, 1);
        std::vector<int> unpermuted(n);
        for (int i = 0; i < n; ++i) unpermuted[i] = hp.labels[perm[i]];
        EXPECT_TRUE(same_partition(h.labels, unpermuted));
    }
}

TEST(Diarize, SmallSessions) {
    const DiarizeConfig cfg;
    EXPECT_EQ(diarize(Matrix(0, 4), nullptr, cfg).labels.size(), 0u);
    const auto one = diarize(Matrix::Ones(1, 4), nullptr, cfg);
    EXPECT_EQ(one.labels, std::vector<int>{0});
    EXPECT_EQ(one.k, 1);
}

TEST(Diarize, IdentityModelWithoutEdgesMatchesBaseline) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    Matrix centroids(3, 6);
    for (Eigen::Index i = 0; i < centroids.size(); ++i) centroids.data()[i] = g(rng);
    Matrix x(15, 6);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 6; ++j) x(i, j) = centroids(i % 3, j) + 0.2 * g(rng);
    RefinerModel identity;
    identity.params.gcn = {Matrix::Identity(6, 6), Matrix::Identity(6, 6)};
    DiarizeConfig cfg;
    cfg.edge_threshold = 1.0;  // strict comparison: no edges survive
    for (auto method : {CountMethod::threshold, CountMethod::eigengap}) {
        cfg.method = method;
        const auto base = diarize(x, nullptr, cfg);
        const auto refined = diarize(x, &identity, cfg);
        EXPECT_EQ(base.labels, refined.labels);
        EXPECT_EQ(base.k, refined.k);
    }
    RefinerModel wrong;
    wrong.params.gcn = {Matrix::Identity(5, 5)};
    EXPECT_THROW(diarize(x, &wrong, cfg), ConfigError);
}
