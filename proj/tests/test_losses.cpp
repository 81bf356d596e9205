#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gnndiar/gradcheck.hpp"
#include "gnndiar/losses.hpp"

using namespace gnndiar;

namespace {

GroundTruthAdjacency truth(std::vector<int> labels) { return adjacency_from_labels(labels); }

std::vector<int> random_labels(std::mt19937_64& rng, int n, int k) {
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) l[i] = i < k ? i : static_cast<int>(rng() % k);
    return l;
}

Matrix random_affinity(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) a(i, j) = a(j, i) = i == j ? 1.0 : u(rng);
    return a;
}

// Sum over (negative pair, positive pair) of the kernel-weighted
// indicator "positive falls at or below the negative's node".
double brute_histogram(const Matrix& a, const GroundTruthAdjacency& gt, const LossConfig& cfg) {
    const double step = (cfg.hi - cfg.lo) / (cfg.bins - 1);
    auto weight = [&](double v, int r) {
        return std::max(0.0, 1.0 - std::abs(std::clamp(v, cfg.lo, cfg.hi) - (cfg.lo + r * step)) / step);
    };
    std::vector<double> pos, neg;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.rows(); ++j)
            if (i != j) (gt.values(i, j) > 0.5 ? pos : neg).push_back(a(i, j));
    double total = 0.0;
    for (double vn : neg)
        for (double vp : pos)
            for (int r = 0; r < cfg.bins; ++r) {
                const double wn = weight(vn, r);
                if (wn == 0.0) continue;
                for (int q = 0; q <= r; ++q) total += wn * weight(vp, q);
            }
    return total / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

template <class F>
void expect_entry_gradients(const Matrix& a, const Matrix& grad, F loss, double h, double tol) {
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) {
            Matrix p = a, m = a;
            p(i, j) += h;
            m(i, j) -= h;
            const double fd = (loss(p) - loss(m)) / (2 * h);
            EXPECT_NEAR(grad(i, j), fd, tol * std::max(1.0, std::abs(fd))) << i << "," << j;
        }
}

}  // namespace

TEST(Bce, Examples) {
    const auto gt = truth({0, 1});
    EXPECT_NEAR(bce_pairwise_loss(Matrix::Constant(2, 2, 0.5), gt).value, std::log(2.0), 1e-15);
    Matrix perfect(2, 2);
    perfect << 1, 0, 0, 1;
    EXPECT_LT(bce_pairwise_loss(perfect, gt).value, 1e-6);
    Matrix wrong(2, 2);
    wrong << 1, 1, 1, 1;
    EXPECT_NEAR(bce_pairwise_loss(wrong, gt).value, -std::log(kBceClamp), 1e-9);
    EXPECT_THROW(bce_pairwise_loss(Matrix::Ones(3, 3), gt), UsageError);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto gt = truth(random_labels(rng, 7, 3));
        const Matrix a = random_affinity(rng, 7, 0.05, 0.95);
        expect_entry_gradients(a, bce_pairwise_loss(a, gt).grad,
                               [&](const Matrix& m) { return bce_pairwise_loss(m, gt).value; }, 1e-6, 1e-6);
    }
}

TEST(Histogram, PerfectSeparationIsZeroAndInversionIsOne) {
    const auto gt = truth({0, 0, 1, 1});
    const LossConfig cfg;
    const Matrix a = 2.0 * gt.values - Matrix::Ones(4, 4);
    EXPECT_EQ(histogram_loss(a, gt, cfg).value, 0.0);
    const Matrix inverted = Matrix::Ones(4, 4) - 2.0 * gt.values;
    EXPECT_NEAR(histogram_loss(inverted, gt, cfg).value, 1.0, 1e-15);
    EXPECT_THROW(histogram_loss(Matrix::Ones(2, 2), truth({0, 0}), cfg), DegenerateInputError);
    EXPECT_THROW(histogram_loss(Matrix::Ones(2, 2), truth({0, 1}), cfg), DegenerateInputError);
}

TEST(Histogram, MatchesBruteForceDoubleSum) {
    std::mt19937_64 rng(2);
    for (int bins : {5, 20, 150}) {
        LossConfig cfg;
        cfg.bins = bins;
        for (int trial = 0; trial < 5; ++trial) {
            const auto gt = truth(random_labels(rng, 6 + trial, 3));
            const Matrix a = random_affinity(rng, 6 + trial, -1.2, 1.2);
            EXPECT_NEAR(histogram_loss(a, gt, cfg).value, brute_histogram(a, gt, cfg), 1e-12);
        }
    }
}

TEST(Histogram, BoundedAndInvariantToPermutation) {
    std::mt19937_64 rng(3);
    const LossConfig cfg;
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5 + static_cast<int>(rng() % 11);  // more nodes than labels, so some pair repeats
        const auto labels = random_labels(rng, n, 2 + static_cast<int>(rng() % 3));
        const auto gt = truth(labels);
        const Matrix a = random_affinity(rng, n, -1.0, 1.0);
        const double v = histogram_loss(a, gt, cfg).value;
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);

        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
        for (int i = 0; i < n; ++i) p.indices()[i] = perm[i];
        const GroundTruthAdjacency pgt{p * gt.values * p.transpose()};
        EXPECT_NEAR(histogram_loss(p * a * p.transpose(), pgt, cfg).value, v, 1e-12);

        // Renaming speakers leaves the adjacency, hence the loss, unchanged.
        std::vector<int> renamed(labels);
        for (auto& l : renamed) l = 10 - l;
        EXPECT_EQ(histogram_loss(a, truth(renamed), cfg).value, v);
    }
}

TEST(Histogram, GradientMatchesFiniteDifferencesAwayFromNodes) {
    std::mt19937_64 rng(4);
    LossConfig cfg;
    cfg.bins = 21;
    const double step = 0.1;
    for (int trial = 0; trial < 5; ++trial) {
        const auto gt = truth(random_labels(rng, 6, 2));
        Matrix a = random_affinity(rng, 6, -0.95, 0.95);
        // Keep entries at least 1e-3 from any node so the stencil stays in one piece.
        a = a.unaryExpr([&](double v) {
            const double off = std::remainder(v + 1.0, step);
            return std::abs(off) < 1e-3 ? v + 2e-3 : v;
        });
        a.diagonal().setOnes();
        expect_entry_gradients(a, histogram_loss(a, gt, cfg).grad,
                               [&](const Matrix& m) { return histogram_loss(m, gt, cfg).value; }, 1e-5, 1e-7);
    }
}

TEST(Nuclear, Examples) {
    const auto gt = truth({0, 0, 1});
    EXPECT_EQ(nuclear_norm_loss(gt.values, gt).value, 0.0);
    const GroundTruthAdjacency zero{Matrix::Zero(4, 4)};
    const auto v = nuclear_norm_loss(Matrix::Identity(4, 4), zero);
    EXPECT_NEAR(v.value, 4.0, 1e-14);
    EXPECT_TRUE(v.grad.isApprox(Matrix::Identity(4, 4), 1e-14));
    Matrix nonfinite = gt.values;
    nonfinite(0, 1) = std::nan("");
    EXPECT_THROW(nuclear_norm_loss(nonfinite, gt), NumericError);
}

TEST(Nuclear, DominatesFrobeniusNorm) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 15);
        const auto gt = truth(random_labels(rng, n, 2));
        const Matrix a = random_affinity(rng, n, -1.0, 1.0);
        EXPECT_GE(nuclear_norm_loss(a, gt).value, (a - gt.values).norm() - 1e-12);
    }
}

TEST(Nuclear, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto gt = truth(random_labels(rng, 6, 2));
        const Matrix sym = random_affinity(rng, 6, -1.0, 1.0);
        expect_entry_gradients(sym, nuclear_norm_loss(sym, gt).grad,
                               [&](const Matrix& m) { return nuclear_norm_loss(m, gt).value; }, 1e-6, 1e-6);
        Matrix asym = sym;
        asym(0, 1) += 0.3;
        expect_entry_gradients(asym, nuclear_norm_loss(asym, gt).grad,
                               [&](const Matrix& m) { return nuclear_norm_loss(m, gt).value; }, 1e-6, 1e-6);
    }
}

TEST(Combined, IsHistogramPlusScaledNuclear) {
    std::mt19937_64 rng(7);
    const auto gt = truth(random_labels(rng, 9, 3));
    const Matrix a = random_affinity(rng, 9, -1.0, 1.0);
    LossConfig cfg;
    cfg.alpha = 0.0;
    EXPECT_EQ(combined_loss(a, gt, cfg).value, histogram_loss(a, gt, cfg).value);
    cfg.alpha = 0.37;
    const auto c = combined_loss(a, gt, cfg);
    const auto h = histogram_loss(a, gt, cfg);
    const auto n = nuclear_norm_loss(a, gt);
    EXPECT_NEAR(c.value, h.value + 0.37 * n.value, 1e-13);
    EXPECT_TRUE(c.grad.isApprox(h.grad + 0.37 * n.grad, 1e-13));
    cfg.kind = LossKind::bce;
    EXPECT_THROW(combined_loss(a, gt, cfg), UsageError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const std::vector<int> dims{4, 5, 3};
    std::mt19937_64 rng(8);
    Matrix x(6, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>()(rng);
    const Matrix l = propagation_matrix(build_cosine_graph(x));
    for (auto kind : {ScorerKind::cosine, ScorerKind::fc_pair}) {
        const auto m = init_model(std::span<const int>(dims), kind, 9);
        const auto g = backward(m, gcn_forward(m, l, x), Matrix::Zero(6, 6));
        for (const auto& v : g.views())
            for (double d : v) EXPECT_EQ(d, 0.0);
    }
}

TEST(Backward, StaleCacheRejected) {
    const std::vector<int> dims{3, 3, 3};
    auto m = init_model(std::span<const int>(dims), ScorerKind::cosine, 1);
    const Matrix x = Matrix::Identity(3, 3);
    const auto pass = gcn_forward(m, Matrix::Identity(3, 3), x);
    AdamState st;
    adam_step(m, backward(m, pass, Matrix::Ones(3, 3)), 1e-3, st);
    EXPECT_THROW(backward(m, pass, Matrix::Ones(3, 3)), UsageError);
}

TEST(Backward, PipelineGradientsMatchFiniteDifferences) {
    for (const auto& c : gradcheck_suite(3, 77)) {
        const auto r = check_pipeline_gradients(c);
        EXPECT_LT(r.max_rel_error, 1e-4) << to_string(c.scorer) << " " << to_string(c.loss.kind);
        EXPECT_GT(r.parameters_checked, 0u);
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    const std::vector<int> dims{4, 4, 4};
    auto m = init_model(std::span<const int>(dims), ScorerKind::fc_pair, 2);
    const auto before = encode_checkpoint(m);
    AdamState st;
    adam_step(m, m.params.zeros_like(), 1e-3, st);
    EXPECT_EQ(encode_checkpoint(m), before);
    EXPECT_EQ(m.revision, 1u);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
    const std::vector<int> dims{2, 2, 2};
    auto m = init_model(std::span<const int>(dims), ScorerKind::cosine, 3);
    const auto start = m.params;
    auto g = m.params.zeros_like();
    g.gcn[0].setConstant(0.25);
    g.gcn[1].setConstant(-4.0);
    AdamState st;
    adam_step(m, g, 1e-3, st);
    EXPECT_TRUE((m.params.gcn[0] - start.gcn[0]).isApprox(Matrix::Constant(2, 2, -1e-3), 1e-6));
    EXPECT_TRUE((m.params.gcn[1] - start.gcn[1]).isApprox(Matrix::Constant(2, 2, 1e-3), 1e-6));
}

TEST(Adam, DeterministicAndShapeChecked) {
    const std::vector<int> dims{3, 3, 3};
    auto a = init_model(std::span<const int>(dims), ScorerKind::cosine, 4);
    auto b = a;
    auto g = a.params.zeros_like();
    g.gcn[0].setConstant(0.1);
    AdamState sa, sb;
    for (int i = 0; i < 5; ++i) {
        adam_step(a, g, 1e-2, sa);
        adam_step(b, g, 1e-2, sb);
    }
    EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
    const std::vector<int> other{3, 2, 3};
    const auto wrong = init_model(std::span<const int>(other), ScorerKind::cosine, 4).params.zeros_like();
    EXPECT_THROW(adam_step(a, wrong, 1e-3, sa), UsageError);
}
