#pragma once

// Synthetic meetings: speakers are unit centroids on the sphere, segments are
// renormalized Gaussian perturbations of their speaker's centroid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"

namespace gnndiar {

struct SimConfig {
    int n_sessions = 100;
    int speakers_min = 2;
    int speakers_max = 15;
    int segments_min = 2;
    int segments_max = 60;
    int dim = 128;
    double segment_duration = 1.5;
    // Per-coordinate noise std is 1/sqrt(concentration); infinity means noiseless.
    double concentration = 50.0;
    double centroid_max_cosine = 0.6;
    std::uint64_t seed = 0;

    void check() const {
        if (n_sessions < 0) throw ConfigError("session count must be nonnegative");
        if (speakers_min < 1 || speakers_min > speakers_max) throw ConfigError("invalid speaker range");
        if (segments_min < 1 || segments_min > segments_max) throw ConfigError("invalid segments-per-speaker range");
        if (dim < 2) throw ConfigError("embedding dim must be at least 2");
        if (!(segment_duration > 0.0)) throw ConfigError("segment duration must be positive");
        if (!(concentration > 0.0)) throw ConfigError("concentration must be positive");
        if (!(centroid_max_cosine > -1.0 && centroid_max_cosine <= 1.0)) throw ConfigError("invalid centroid cosine cap");
    }
};

struct SimulatedSession {
    EmbeddingMatrix embeddings;
    std::vector<int> labels;
    GroundTruthAdjacency adjacency;
    int speakers = 0;
};

inline constexpr int kMaxCentroidAttempts = 1000;

inline std::string session_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sim%05d", index);
    return buf;
}

inline SimulatedSession simulate_session(const SimConfig& cfg, int session_index) {
    cfg.check();
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(session_index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto unit_vector = [&] {
        Vector v(cfg.dim);
        do {
            for (int j = 0; j < cfg.dim; ++j) v[j] = gauss(rng);
        } while (v.norm() == 0.0);
        return Vector(v.normalized());
    };

    const int speakers = std::uniform_int_distribution<int>(cfg.speakers_min, cfg.speakers_max)(rng);
    std::vector<Vector> centroids;
    for (int s = 0; s < speakers; ++s) {
        for (int attempt = 0;; ++attempt) {
            if (attempt == kMaxCentroidAttempts)
                throw GenerationError("could not place speaker " + std::to_string(s) + " of " +
                                      std::to_string(speakers) + " under the centroid cosine cap");
            Vector c = unit_vector();
            const bool ok = std::none_of(centroids.begin(), centroids.end(),
                                         [&](const Vector& o) { return o.dot(c) > cfg.centroid_max_cosine; });
            if (ok) {
                centroids.push_back(std::move(c));
                break;
            }
        }
    }

    std::uniform_int_distribution<int> seg_count(cfg.segments_min, cfg.segments_max);
    SimulatedSession out;
    out.speakers = speakers;
    for (int s = 0; s < speakers; ++s) out.labels.insert(out.labels.end(), seg_count(rng), s);
    std::shuffle(out.labels.begin(), out.labels.end(), rng);

    const double noise = std::isinf(cfg.concentration) ? 0.0 : 1.0 / std::sqrt(cfg.concentration);
    const auto n = static_cast<Eigen::Index>(out.labels.size());
    out.embeddings.values.resize(n, cfg.dim);
    const std::string id = session_name(session_index);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector e = centroids[out.labels[i]];
        if (noise > 0.0)
            for (int j = 0; j < cfg.dim; ++j) e[j] += noise * gauss(rng);
        out.embeddings.values.row(i) = e.normalized().transpose();
        out.embeddings.meta.push_back({id, static_cast<double>(i) * cfg.segment_duration, cfg.segment_duration,
                                       out.labels[i]});
    }
    out.adjacency = adjacency_from_labels(out.labels);
    return out;
}

struct ManifestEntry {
    std::string path;  // as written; resolved against the manifest directory by read_manifest
    int speakers = 0;
    int segments = 0;
};

inline constexpr const char* kManifestName = "manifest.tsv";

inline std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
    const std::string text = detail::read_file(manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    std::vector<ManifestEntry> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string_view line(text.data() + pos, eol - pos);
        if (!line.empty()) {
            const auto f = detail::split(line, '\t');
            ManifestEntry e;
            if (f.size() != 3 || f[0].empty() || !detail::parse_number(f[1], e.speakers) ||
                !detail::parse_number(f[2], e.segments))
                throw ParseError("malformed manifest line", pos);
            const std::filesystem::path p(f[0]);
            e.path = p.is_absolute() ? p.string() : (base / p).string();
            out.push_back(std::move(e));
        }
        pos = eol + 1;
    }
    return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& manifest_path) {
    std::string text;
    for (const auto& e : entries)
        text += e.path + '\t' + std::to_string(e.speakers) + '\t' + std::to_string(e.segments) + '\n';
    detail::write_file(manifest_path, text);
}

/// Generates cfg.n_sessions sessions and, when `out_dir` is non-empty, writes
/// one embedding file per session plus manifest.tsv into it.
inline std::vector<SimulatedSession> simulate_corpus(const SimConfig& cfg, const std::string& out_dir = {}) {
    cfg.check();
    std::vector<SimulatedSession> sessions;
    sessions.reserve(static_cast<std::size_t>(cfg.n_sessions));
    std::vector<ManifestEntry> manifest;
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
    }
    for (int i = 0; i < cfg.n_sessions; ++i) {
        sessions.push_back(simulate_session(cfg, i));
        if (out_dir.empty()) continue;
        const std::string file = session_name(i) + ".emb";
        save_embeddings(sessions.back().embeddings, (std::filesystem::path(out_dir) / file).string());
        manifest.push_back({file, sessions.back().speakers, static_cast<int>(sessions.back().labels.size())});
    }
    if (!out_dir.empty()) write_manifest(manifest, (std::filesystem::path(out_dir) / kManifestName).string());
    return sessions;
}

/// Loads every session listed in a manifest.
inline std::vector<EmbeddingMatrix> load_corpus(const std::string& manifest_path) {
    std::vector<EmbeddingMatrix> out;
    for (const auto& e : read_manifest(manifest_path)) {
        out.push_back(load_embeddings(e.path));
        if (out.back().rows() != e.segments)
            throw ParseError("'" + e.path + "' has " + std::to_string(out.back().rows()) +
                                 " segments, manifest says " + std::to_string(e.segments), 0);
    }
    return out;
}

}  // namespace gnndiar
