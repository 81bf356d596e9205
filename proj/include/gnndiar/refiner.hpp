#pragma once

// Embedding refiner: stacked linear GCN layers (the encoder) followed by a
// pairwise scorer, either cosine or a small FC classifier on concatenated pairs.
//
// The encoder is the GCN instance of a message-passing layer
//   x_i' = update(x_i, aggregate_j message(x_i, x_j, e_ij)).
// Other instances (attention, edge-feature messages) would slot in as
// alternative forward/backward pairs over the same ForwardPass cache.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"
#include "gnndiar/linalg.hpp"
#include "gnndiar/session_graph.hpp"

namespace gnndiar {

enum class ScorerKind : std::uint8_t { cosine = 0, fc_pair = 1 };

inline std::string to_string(ScorerKind k) { return k == ScorerKind::cosine ? "cosine" : "fc"; }

inline constexpr int kDefaultFcHidden = 64;

struct FcHead {
    Matrix hidden_w;  // H x 2D'
    Vector hidden_b;  // H
    Vector out_w;     // H
    double out_b = 0.0;
};

/// Trainable parameters. Also used as the gradient container, with
/// identical shapes.
struct ParameterSet {
    std::vector<Matrix> gcn;  // layer k: D_out x D_in, applied as H * W^T
    std::optional<FcHead> fc;

    /// Flat views over every parameter block in declaration order.
    std::vector<std::span<double>> views() {
        std::vector<std::span<double>> v;
        for (auto& w : gcn) v.emplace_back(w.data(), static_cast<std::size_t>(w.size()));
        if (fc) {
            v.emplace_back(fc->hidden_w.data(), static_cast<std::size_t>(fc->hidden_w.size()));
            v.emplace_back(fc->hidden_b.data(), static_cast<std::size_t>(fc->hidden_b.size()));
            v.emplace_back(fc->out_w.data(), static_cast<std::size_t>(fc->out_w.size()));
            v.emplace_back(&fc->out_b, 1);
        }
        return v;
    }

    std::vector<std::span<const double>> views() const {
        std::vector<std::span<const double>> out;
        for (auto s : const_cast<ParameterSet*>(this)->views()) out.emplace_back(s.data(), s.size());
        return out;
    }

    ParameterSet zeros_like() const {
        ParameterSet z;
        for (const auto& w : gcn) z.gcn.push_back(Matrix::Zero(w.rows(), w.cols()));
        if (fc)
            z.fc = FcHead{Matrix::Zero(fc->hidden_w.rows(), fc->hidden_w.cols()), Vector::Zero(fc->hidden_b.size()),
                          Vector::Zero(fc->out_w.size()), 0.0};
        return z;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto s : views()) n += s.size();
        return n;
    }

    bool all_finite() const {
        for (auto s : views())
            for (double x : s)
                if (!std::isfinite(x)) return false;
        return true;
    }

    bool same_shape(const ParameterSet& other) const {
        const auto a = views();
        const auto b = other.views();
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].size() != b[i].size()) return false;
        for (std::size_t k = 0; k < gcn.size(); ++k)
            if (gcn[k].rows() != other.gcn[k].rows() || gcn[k].cols() != other.gcn[k].cols()) return false;
        return true;
    }
};

using GradientSet = ParameterSet;

struct RefinerModel {
    ParameterSet params;
    ScorerKind scorer = ScorerKind::cosine;
    // Bumped on every parameter update so stale forward caches are detectable.
    std::uint64_t revision = 0;

    Eigen::Index input_dim() const { return params.gcn.front().cols(); }
    Eigen::Index output_dim() const { return params.gcn.back().rows(); }
};

/// Layer dimension chain, e.g. {128, 128, 128} for two 128 -> 128 layers.
inline RefinerModel init_model(std::span<const int> dims, ScorerKind scorer, std::uint64_t seed,
                               int fc_hidden = kDefaultFcHidden) {
    if (dims.size() < 2) throw ConfigError("a refiner needs at least one layer (two dimensions)");
    for (int d : dims)
        if (d <= 0) throw ConfigError("layer dimensions must be positive");
    if (scorer == ScorerKind::fc_pair && fc_hidden <= 0) throw ConfigError("FC hidden width must be positive");

    std::mt19937_64 rng(seed);
    auto draw = [&rng](Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-s, s);
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v = u(rng);
                while (v == -s) v = u(rng);
                m(i, j) = v;
            }
        return m;
    };

    RefinerModel model;
    model.scorer = scorer;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) model.params.gcn.push_back(draw(dims[k + 1], dims[k], dims[k]));
    if (scorer == ScorerKind::fc_pair) {
        const Eigen::Index in = 2 * dims.back();
        FcHead fc;
        fc.hidden_w = draw(fc_hidden, in, in);
        fc.hidden_b = draw(fc_hidden, 1, in).col(0);
        fc.out_w = draw(fc_hidden, 1, fc_hidden).col(0);
        fc.out_b = draw(1, 1, fc_hidden)(0, 0);
        model.params.fc = std::move(fc);
    }
    return model;
}

/// Explicit (in, out) per-layer shapes; consecutive layers must chain.
struct LayerShape {
    int in = 0;
    int out = 0;
};

inline RefinerModel init_model(std::span<const LayerShape> layers, ScorerKind scorer, std::uint64_t seed,
                               int fc_hidden = kDefaultFcHidden) {
    if (layers.empty()) throw ConfigError("a refiner needs at least one layer");
    std::vector<int> dims{layers.front().in};
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (k > 0 && layers[k].in != layers[k - 1].out)
            throw ConfigError("layer " + std::to_string(k) + " input dim " + std::to_string(layers[k].in) +
                              " does not match previous output dim " + std::to_string(layers[k - 1].out));
        dims.push_back(layers[k].out);
    }
    return init_model(std::span<const int>(dims), scorer, seed, fc_hidden);
}

/// Intermediates of one encoder pass, consumed by backward().
struct ForwardPass {
    Matrix propagation;               // L
    std::vector<Matrix> propagated;   // L * H_{k-1}, the input each layer multiplies by W_k^T
    Matrix z;                         // refined embeddings, N x D'
    std::uint64_t model_revision = 0;
};

/// Z = L (... L (L X W_1^T) W_2^T ...) with no nonlinearity between layers.
inline ForwardPass gcn_forward(const RefinerModel& model, const Matrix& propagation, const Matrix& x) {
    if (model.params.gcn.empty()) throw ConfigError("model has no GCN layers");
    if (propagation.rows() != propagation.cols() || propagation.rows() != x.rows())
        throw ConfigError("propagation matrix is " + std::to_string(propagation.rows()) + "x" +
                          std::to_string(propagation.cols()) + " for " + std::to_string(x.rows()) + " nodes");
    if (x.cols() != model.input_dim())
        throw ConfigError("embedding dim " + std::to_string(x.cols()) + " does not match model input dim " +
                          std::to_string(model.input_dim()));
    ForwardPass pass;
    pass.propagation = propagation;
    pass.model_revision = model.revision;
    Matrix h = x;
    for (const auto& w : model.params.gcn) {
        pass.propagated.push_back(propagation * h);
        h = pass.propagated.back() * w.transpose();
    }
    pass.z = std::move(h);
    return pass;
}

inline Matrix refine(const RefinerModel& model, const SessionGraph& graph) {
    return gcn_forward(model, propagation_matrix(graph), graph.features).z;
}

inline Matrix refined_affinity_cosine(const Matrix& z) {
    try {
        return pairwise_cosine(z);
    } catch (const DegenerateInputError& e) {
        throw DegenerateOutputError(std::string("refined embedding collapsed: ") + e.what());
    }
}

namespace detail {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

inline const FcHead& require_fc(const RefinerModel& model) {
    if (model.scorer != ScorerKind::fc_pair || !model.params.fc)
        throw UsageError("model does not carry an FC pair scorer");
    return *model.params.fc;
}

// Score of the ordered pair (a, b): sigmoid(w . ELU(W_h [a; b] + b_h) + b_out).
inline double fc_ordered_score(const FcHead& fc, const Vector& a, const Vector& b) {
    const Eigen::Index d = a.size();
    const Vector pre = fc.hidden_w.leftCols(d) * a + fc.hidden_w.rightCols(d) * b + fc.hidden_b;
    return sigmoid(fc.out_w.dot(pre.unaryExpr(&elu)) + fc.out_b);
}

}  // namespace detail

/// Order-symmetrized FC pair score in (0, 1).
inline double fc_pair_score(const RefinerModel& model, const Vector& zi, const Vector& zj) {
    const auto& fc = detail::require_fc(model);
    if (zi.size() != zj.size() || 2 * zi.size() != fc.hidden_w.cols())
        throw ConfigError("pair dimension does not match the FC scorer input");
    return 0.5 * (detail::fc_ordered_score(fc, zi, zj) + detail::fc_ordered_score(fc, zj, zi));
}

/// All pair scores at once. Splits W_h into the halves acting on each side of
/// the concatenation, so the hidden pre-activation of (i, j) is left_i + right_j + b_h.
inline Matrix refined_affinity_fc(const RefinerModel& model, const Matrix& z) {
    const auto& fc = detail::require_fc(model);
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    if (2 * d != fc.hidden_w.cols()) throw ConfigError("refined dim does not match the FC scorer input");
    const Matrix left = z * fc.hidden_w.leftCols(d).transpose();   // N x H
    const Matrix right = z * fc.hidden_w.rightCols(d).transpose();  // N x H
    Matrix s = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Vector pre_ij = (left.row(i) + right.row(j)).transpose() + fc.hidden_b;
            const Vector pre_ji = (left.row(j) + right.row(i)).transpose() + fc.hidden_b;
            const double s_ij = detail::sigmoid(fc.out_w.dot(pre_ij.unaryExpr(&detail::elu)) + fc.out_b);
            const double s_ji = detail::sigmoid(fc.out_w.dot(pre_ji.unaryExpr(&detail::elu)) + fc.out_b);
            s(i, j) = s(j, i) = 0.5 * (s_ij + s_ji);
        }
    return s;
}

inline Matrix refined_affinity(const RefinerModel& model, const Matrix& z) {
    return model.scorer == ScorerKind::cosine ? refined_affinity_cosine(z) : refined_affinity_fc(model, z);
}

// Checkpoint layout (little-endian):
//   "GNNREF1\n" u32 layers, layers x (u32 out, u32 in), float64 weights row-major per layer,
//   u8 scorer tag; FC only: u32 hidden, u32 input, hidden_w row-major, hidden_b, out_w, out_b.
namespace detail {
inline constexpr std::string_view kCheckpointMagic = "GNNREF1\n";

inline void put_matrix(std::string& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}
}  // namespace detail

inline std::string encode_checkpoint(const RefinerModel& model) {
    std::string out(detail::kCheckpointMagic);
    detail::put_u32(out, static_cast<std::uint32_t>(model.params.gcn.size()));
    for (const auto& w : model.params.gcn) {
        detail::put_u32(out, static_cast<std::uint32_t>(w.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(w.cols()));
    }
    for (const auto& w : model.params.gcn) detail::put_matrix(out, w);
    out.push_back(static_cast<char>(model.scorer));
    if (model.scorer == ScorerKind::fc_pair) {
        const auto& fc = detail::require_fc(model);
        detail::put_u32(out, static_cast<std::uint32_t>(fc.hidden_w.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(fc.hidden_w.cols()));
        detail::put_matrix(out, fc.hidden_w);
        for (double v : fc.hidden_b) detail::put_f64(out, v);
        for (double v : fc.out_w) detail::put_f64(out, v);
        detail::put_f64(out, fc.out_b);
    }
    return out;
}

inline RefinerModel decode_checkpoint(std::string_view data) {
    const auto& magic = detail::kCheckpointMagic;
    if (data.size() < magic.size() || data.substr(0, magic.size()) != magic)
        throw ParseError("bad magic, not a refiner checkpoint", 0);
    std::size_t pos = magic.size();
    auto need = [&](std::size_t bytes) {
        if (data.size() - pos < bytes) throw ParseError("truncated checkpoint", data.size());
    };
    auto u32 = [&] {
        need(4);
        const auto v = detail::get_u32(data, pos);
        pos += 4;
        return v;
    };
    auto f64 = [&] {
        need(8);
        const double v = detail::get_f64(data, pos);
        if (!std::isfinite(v)) throw ParseError("non-finite parameter", pos);
        pos += 8;
        return v;
    };
    auto matrix = [&](std::uint32_t rows, std::uint32_t cols) {
        need(std::uint64_t{rows} * cols * 8);
        Matrix m(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = f64();
        return m;
    };

    RefinerModel model;
    const auto layers = u32();
    if (layers == 0) throw ParseError("checkpoint has no layers", pos);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
    for (std::uint32_t k = 0; k < layers; ++k) {
        const auto rows = u32();
        const auto cols = u32();
        if (rows == 0 || cols == 0) throw ParseError("zero layer dimension", pos);
        if (k > 0 && cols != shapes.back().first) throw ParseError("layer dimensions do not chain", pos);
        shapes.emplace_back(rows, cols);
    }
    for (auto [rows, cols] : shapes) model.params.gcn.push_back(matrix(rows, cols));
    need(1);
    const auto tag = static_cast<std::uint8_t>(data[pos++]);
    if (tag > 1) throw ParseError("unknown scorer tag", pos - 1);
    model.scorer = static_cast<ScorerKind>(tag);
    if (model.scorer == ScorerKind::fc_pair) {
        const auto hidden = u32();
        const auto in = u32();
        if (hidden == 0 || in != 2 * shapes.back().first) throw ParseError("FC head does not match encoder output", pos);
        FcHead fc;
        fc.hidden_w = matrix(hidden, in);
        fc.hidden_b = matrix(hidden, 1).col(0);
        fc.out_w = matrix(hidden, 1).col(0);
        fc.out_b = f64();
        model.params.fc = std::move(fc);
    }
    if (pos != data.size()) throw ParseError("trailing bytes after checkpoint", pos);
    return model;
}

inline void save_checkpoint(const RefinerModel& model, const std::string& path) {
    detail::write_file(path, encode_checkpoint(model));
}

inline RefinerModel load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

/// FNV-1a over the checkpoint encoding.
inline std::uint64_t model_checksum(const RefinerModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : encode_checkpoint(model)) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace gnndiar
