#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "gnndiar/session_graph.hpp"

using namespace gnndiar;

namespace {

Matrix mat(int rows, int cols, std::initializer_list<double> v) {
    Matrix m(rows, cols);
    auto it = v.begin();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = *it++;
    return m;
}

SessionGraph random_graph(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g;
    Matrix x(n, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return build_cosine_graph(x, 0.2);
}

}  // namespace

TEST(PairwiseCosine, Examples) {
    EXPECT_TRUE(pairwise_cosine(mat(2, 2, {1, 0, 1, 0})).isApprox(Matrix::Ones(2, 2)));
    EXPECT_EQ(pairwise_cosine(mat(2, 2, {1, 0, 0, 1})), Matrix::Identity(2, 2));
    EXPECT_EQ(pairwise_cosine(mat(2, 2, {1, 0, -1, 0}))(0, 1), -1.0);
}

TEST(PairwiseCosine, ZeroRowNamed) {
    try {
        pairwise_cosine(mat(3, 2, {1, 0, 0, 0, 1, 1}));
        FAIL();
    } catch (const DegenerateInputError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    }
}

TEST(PairwiseCosine, BoundedSymmetricUnitDiagonal) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    Matrix x(20, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const Matrix c = pairwise_cosine(x);
    EXPECT_EQ(c, c.transpose());
    EXPECT_TRUE(c.diagonal().isOnes());
    EXPECT_LE(c.maxCoeff(), 1.0);
    EXPECT_GE(c.minCoeff(), -1.0);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j)
            if (i != j) EXPECT_NEAR(c(i, j), x.row(i).dot(x.row(j)) / (x.row(i).norm() * x.row(j).norm()), 1e-14);
}

TEST(SessionGraph, Thresholding) {
    const Matrix x = Matrix::Identity(2, 2);
    EXPECT_EQ(build_session_graph(x, mat(2, 2, {1, .5, .5, 1}), 0.2).affinity, mat(2, 2, {0, .5, .5, 0}));
    EXPECT_TRUE(build_session_graph(x, mat(2, 2, {1, .1, .1, 1}), 0.2).affinity.isZero());
    // exactly at the threshold: dropped
    const Matrix s3 = mat(3, 3, {1, .2, .7, .2, 1, .1, .7, .1, 1});
    const auto g = build_session_graph(Matrix::Identity(3, 3), s3, 0.2);
    EXPECT_EQ(g.affinity(0, 1), 0.0);
    EXPECT_EQ(g.affinity(0, 2), 0.7);
}

TEST(SessionGraph, AsymmetricScoresAreAveraged) {
    const auto g = build_session_graph(Matrix::Identity(2, 2), mat(2, 2, {1, .9, .1, 1}), 0.2);
    EXPECT_EQ(g.affinity, g.affinity.transpose());
    EXPECT_DOUBLE_EQ(g.affinity(0, 1), 0.5);
}

TEST(PropagationMatrix, HandComputed) {
    SessionGraph g{Matrix::Identity(2, 2), mat(2, 2, {0, 1, 1, 0}), 0.2};
    EXPECT_TRUE(propagation_matrix(g).isApprox(Matrix::Constant(2, 2, 0.5)));

    g = {Matrix::Identity(3, 3), Matrix::Zero(3, 3), 0.2};
    EXPECT_EQ(propagation_matrix(g), Matrix::Identity(3, 3));

    g = {Matrix::Identity(3, 3), mat(3, 3, {0, 1, 0, 1, 0, 0, 0, 0, 0}), 0.2};
    const Matrix l = propagation_matrix(g);
    EXPECT_DOUBLE_EQ(l(2, 2), 1.0);
    EXPECT_DOUBLE_EQ(l(0, 1), 0.5);
    EXPECT_EQ(l(0, 2), 0.0);
}

TEST(PropagationMatrix, SymmetricWithSpectralRadiusAtMostOne) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 40; ++trial) {
        const auto g = random_graph(rng, 2 + static_cast<int>(rng() % 49));
        EXPECT_EQ(g.affinity, g.affinity.transpose());
        EXPECT_TRUE(g.affinity.diagonal().isZero());
        const Matrix l = propagation_matrix(g);
        EXPECT_TRUE(l.isApprox(l.transpose(), 1e-14));
        const Vector ev = symmetric_eigenvalues(l);
        EXPECT_LE(ev.maxCoeff(), 1.0 + 1e-12);
        EXPECT_GE(ev.minCoeff(), -1.0 - 1e-12);
    }
}

TEST(PropagationMatrix, PermutationEquivariant) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 20);
        const auto g = random_graph(rng, n);
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
        for (int i = 0; i < n; ++i) p.indices()[i] = perm[i];
        SessionGraph pg{p * g.features, p * g.affinity * p.transpose(), g.edge_threshold};
        EXPECT_TRUE(propagation_matrix(pg).isApprox(p * propagation_matrix(g) * p.transpose(), 1e-13));
    }
}
