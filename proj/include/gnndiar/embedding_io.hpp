#pragma once

// Embedding / label data model and its on-disk formats.
//
// Embedding file layout (little-endian):
//   "SPKEMB1\n"  u32 N  u32 D  N*D float64 row-major
//   N metadata lines "session_id\tstart\tduration\tlabel_or_-1\n"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gnndiar/errors.hpp"
#include "gnndiar/linalg.hpp"

namespace gnndiar {

struct SegmentMeta {
    std::string session_id;
    double start = 0.0;
    double duration = 1.5;
    std::optional<int> speaker_label;

    bool operator==(const SegmentMeta&) const = default;
};

struct EmbeddingMatrix {
    Matrix values;  // N x D
    std::vector<SegmentMeta> meta;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }

    /// Ground-truth labels; throws if any segment is unlabeled.
    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(meta.size());
        for (const auto& m : meta) {
            if (!m.speaker_label) throw UsageError("segment of session '" + m.session_id + "' has no label");
            out.push_back(*m.speaker_label);
        }
        return out;
    }

    std::vector<double> durations() const {
        std::vector<double> out;
        out.reserve(meta.size());
        for (const auto& m : meta) out.push_back(m.duration);
        return out;
    }
};

/// Dense N x N same-speaker indicator.
struct GroundTruthAdjacency {
    Matrix values;
    Eigen::Index size() const { return values.rows(); }
};

/// Per-segment labels plus the speaker count they were clustered into.
struct DiarizationHypothesis {
    std::vector<int> labels;
    int k = 0;
};

inline bool rows_unit_norm(const Matrix& x, double tol = 1e-6) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (std::abs(x.row(i).norm() - 1.0) > tol) return false;
    return true;
}

namespace detail {

// Session ids double as RTTM fields and file stems: printable, no whitespace.
inline bool valid_session_id(std::string_view id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u > 0x20 && u != 0x7f;
    });
}

}  // namespace detail

/// Throws UsageError when an EmbeddingMatrix breaks its invariants.
inline void validate(const EmbeddingMatrix& m) {
    if (static_cast<std::size_t>(m.rows()) != m.meta.size())
        throw UsageError("embedding rows (" + std::to_string(m.rows()) + ") and metadata entries (" +
                         std::to_string(m.meta.size()) + ") disagree");
    if (!m.values.allFinite()) throw UsageError("embedding matrix has non-finite entries");
    for (std::size_t i = 0; i < m.meta.size(); ++i) {
        const auto& s = m.meta[i];
        if (!(s.duration > 0.0)) throw UsageError("segment " + std::to_string(i) + " has non-positive duration");
        if (!(s.start >= 0.0)) throw UsageError("segment " + std::to_string(i) + " has negative start");
        if (s.speaker_label && *s.speaker_label < 0)
            throw UsageError("segment " + std::to_string(i) + " has a negative speaker label");
        if (!detail::valid_session_id(s.session_id))
            throw UsageError("segment " + std::to_string(i) + " has an empty session id or one with whitespace");
        if (i > 0 && m.meta[i - 1].session_id == s.session_id && s.start < m.meta[i - 1].start)
            throw UsageError("segment " + std::to_string(i) + " starts before its predecessor");
    }
}

inline GroundTruthAdjacency adjacency_from_labels(std::span<const int> labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    GroundTruthAdjacency a{Matrix::Zero(n, n)};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            a.values(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    return a;
}

namespace detail {

inline constexpr std::string_view kEmbeddingMagic = "SPKEMB1\n";

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
    return v;
}

inline double get_f64(std::string_view in, std::size_t at) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
    return std::bit_cast<double>(bits);
}

// Shortest representation that parses back to the same double.
inline std::string format_exact(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (true) {
        const auto next = s.find(sep, pos);
        parts.push_back(s.substr(pos, next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return parts;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
    validate(m);
    std::string out(detail::kEmbeddingMagic);
    detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.reserve(out.size() + static_cast<std::size_t>(m.values.size()) * 8 + m.meta.size() * 32);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f64(out, m.values(i, j));
    for (const auto& s : m.meta) {
        out += s.session_id;
        out += '\t';
        out += detail::format_exact(s.start);
        out += '\t';
        out += detail::format_exact(s.duration);
        out += '\t';
        out += std::to_string(s.speaker_label.value_or(-1));
        out += '\n';
    }
    return out;
}

inline EmbeddingMatrix decode_embeddings(std::string_view data) {
    const auto& magic = detail::kEmbeddingMagic;
    if (data.size() < magic.size() || data.substr(0, magic.size()) != magic)
        throw ParseError("bad magic, not an embedding file", 0);
    if (data.size() < magic.size() + 8) throw ParseError("truncated header", data.size());
    const std::uint32_t n = detail::get_u32(data, magic.size());
    const std::uint32_t d = detail::get_u32(data, magic.size() + 4);
    std::size_t pos = magic.size() + 8;
    const std::uint64_t payload = std::uint64_t{n} * d * 8;
    if (data.size() - pos < payload)
        throw ParseError("value block shorter than header N=" + std::to_string(n) + ", D=" + std::to_string(d), data.size());

    EmbeddingMatrix m;
    m.values.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < d; ++j) {
            const double v = detail::get_f64(data, pos);
            if (!std::isfinite(v)) throw ParseError("non-finite embedding value", pos);
            m.values(i, j) = v;
            pos += 8;
        }

    m.meta.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto eol = data.find('\n', pos);
        if (eol == std::string_view::npos) throw ParseError("missing metadata line " + std::to_string(i), pos);
        const auto fields = detail::split(data.substr(pos, eol - pos), '\t');
        SegmentMeta s;
        int label = -1;
        if (fields.size() != 4 || !detail::parse_number(fields[1], s.start) ||
            !detail::parse_number(fields[2], s.duration) || !detail::parse_number(fields[3], label) || label < -1)
            throw ParseError("malformed metadata line " + std::to_string(i), pos);
        if (!(s.duration > 0.0) || !(s.start >= 0.0) || !std::isfinite(s.start) || !std::isfinite(s.duration))
            throw ParseError("invalid segment timing on metadata line " + std::to_string(i), pos);
        if (!detail::valid_session_id(fields[0]))
            throw ParseError("invalid session id on metadata line " + std::to_string(i), pos);
        s.session_id = std::string(fields[0]);
        if (label >= 0) s.speaker_label = label;
        m.meta.push_back(std::move(s));
        pos = eol + 1;
    }
    if (pos != data.size()) throw ParseError("trailing data after " + std::to_string(n) + " rows", pos);
    try {
        validate(m);
    } catch (const UsageError& e) {
        throw ParseError(e.what(), pos);
    }
    return m;
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
    return decode_embeddings(detail::read_file(path));
}

inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    detail::write_file(path, encode_embeddings(m));
}

struct RttmSegment {
    std::string session_id;
    double start = 0.0;
    double duration = 0.0;
    int label = 0;
};

inline std::string format_rttm(const DiarizationHypothesis& hyp, std::span<const SegmentMeta> meta) {
    if (hyp.labels.size() != meta.size())
        throw UsageError("hypothesis has " + std::to_string(hyp.labels.size()) + " labels for " +
                         std::to_string(meta.size()) + " segments");
    std::string out;
    char line[512];
    for (std::size_t i = 0; i < meta.size(); ++i) {
        const int len = std::snprintf(line, sizeof line, "SPEAKER %s 1 %.3f %.3f <NA> <NA> spk%d <NA> <NA>\n",
                                      meta[i].session_id.c_str(), meta[i].start, meta[i].duration, hyp.labels[i]);
        if (len < 0 || static_cast<std::size_t>(len) >= sizeof line) throw UsageError("RTTM line too long");
        out.append(line, static_cast<std::size_t>(len));
    }
    return out;
}

inline void write_rttm(const DiarizationHypothesis& hyp, std::span<const SegmentMeta> meta, const std::string& path) {
    detail::write_file(path, format_rttm(hyp, meta));
}

inline std::vector<RttmSegment> parse_rttm(std::string_view text) {
    std::vector<RttmSegment> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        const auto line = text.substr(pos, eol - pos);
        if (!line.empty()) {
            std::vector<std::string_view> fields;
            for (auto f : detail::split(line, ' '))
                if (!f.empty()) fields.push_back(f);
            RttmSegment s;
            if (fields.size() < 8 || fields[0] != "SPEAKER" || !detail::parse_number(fields[3], s.start) ||
                !detail::parse_number(fields[4], s.duration) || !fields[7].starts_with("spk") ||
                !detail::parse_number(fields[7].substr(3), s.label))
                throw ParseError("malformed RTTM line", pos);
            s.session_id = std::string(fields[1]);
            out.push_back(std::move(s));
        }
        pos = eol + 1;
    }
    return out;
}

inline std::vector<RttmSegment> read_rttm(const std::string& path) {
    return parse_rttm(detail::read_file(path));
}

}  // namespace gnndiar
