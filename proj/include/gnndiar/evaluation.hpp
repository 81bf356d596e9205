#pragma once

// Confusion-only diarization error, speaker-count error and count-threshold sweeps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gnndiar/clustering.hpp"
#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"
#include "gnndiar/refiner.hpp"

namespace gnndiar {

inline constexpr int kNullSpeaker = -1;

namespace detail {

// Maximum-weight assignment on a square matrix (Hungarian method with
// potentials, minimizing negated weights). Returns column assigned to each row.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
    const int n = static_cast<int>(weight.size());
    if (n == 0) return {};
    double top = 0.0;
    for (const auto& row : weight)
        for (double w : row) top = std::max(top, w);
    const double inf = std::numeric_limits<double>::infinity();
    // 1-indexed arrays; row 0 / column 0 are sentinels.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = (top - weight[i0 - 1][j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, 0);
    for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

inline void check_lengths(std::span<const int> ref, std::span<const int> hyp, std::span<const double> durations) {
    if (ref.size() != hyp.size())
        throw UsageError("reference has " + std::to_string(ref.size()) + " segments, hypothesis " +
                         std::to_string(hyp.size()));
    if (!durations.empty() && durations.size() != ref.size())
        throw UsageError("duration list length does not match the segment count");
    for (double d : durations)
        if (!(d > 0.0)) throw UsageError("segment durations must be positive");
}

}  // namespace detail

/// One-to-one hypothesis -> reference label mapping maximizing the
/// duration of correctly attributed segments. Hypothesis labels left without
/// a reference partner map to kNullSpeaker. Empty `durations` means unit weights.
inline std::map<int, int> optimal_label_mapping(std::span<const int> ref, std::span<const int> hyp,
                                                std::span<const double> durations = {}) {
    detail::check_lengths(ref, hyp, durations);
    const std::set<int> ref_set(ref.begin(), ref.end());
    const std::set<int> hyp_set(hyp.begin(), hyp.end());
    const std::vector<int> ref_labels(ref_set.begin(), ref_set.end());
    const std::vector<int> hyp_labels(hyp_set.begin(), hyp_set.end());
    const std::size_t n = std::max(ref_labels.size(), hyp_labels.size());
    std::vector<std::vector<double>> overlap(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto h = std::lower_bound(hyp_labels.begin(), hyp_labels.end(), hyp[i]) - hyp_labels.begin();
        const auto r = std::lower_bound(ref_labels.begin(), ref_labels.end(), ref[i]) - ref_labels.begin();
        overlap[h][r] += durations.empty() ? 1.0 : durations[i];
    }
    const auto assignment = detail::max_weight_assignment(overlap);
    std::map<int, int> mapping;
    for (std::size_t h = 0; h < hyp_labels.size(); ++h) {
        const auto r = static_cast<std::size_t>(assignment[h]);
        mapping[hyp_labels[h]] = r < ref_labels.size() ? ref_labels[r] : kNullSpeaker;
    }
    return mapping;
}

/// Fraction of speech duration attributed to the wrong speaker after optimal mapping.
inline double confusion_der(std::span<const int> ref, std::span<const int> hyp, std::span<const double> durations) {
    detail::check_lengths(ref, hyp, durations);
    if (ref.empty()) return 0.0;
    const auto mapping = optimal_label_mapping(ref, hyp, durations);
    double wrong = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = durations.empty() ? 1.0 : durations[i];
        total += d;
        if (mapping.at(hyp[i]) != ref[i]) wrong += d;
    }
    return wrong / total;
}

inline int distinct_count(std::span<const int> labels) {
    return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

struct SessionRecord {
    std::string session_id;
    int true_speakers = 0;
    int estimated_speakers = 0;
    double der = 0.0;
    double duration = 0.0;
};

struct EvalReport {
    double der = 0.0;               // duration-weighted over sessions
    double count_error_mean = 0.0;  // mean |estimated - true|
    std::vector<SessionRecord> sessions;
};

inline EvalReport aggregate(std::vector<SessionRecord> records) {
    EvalReport r;
    r.sessions = std::move(records);
    double weighted = 0.0;
    double total = 0.0;
    double count_err = 0.0;
    for (const auto& s : r.sessions) {
        weighted += s.der * s.duration;
        total += s.duration;
        count_err += std::abs(s.estimated_speakers - s.true_speakers);
    }
    r.der = total > 0.0 ? weighted / total : 0.0;
    r.count_error_mean = r.sessions.empty() ? 0.0 : count_err / static_cast<double>(r.sessions.size());
    return r;
}

inline SessionRecord score_session(const EmbeddingMatrix& reference, const DiarizationHypothesis& hyp) {
    const auto ref = reference.labels();
    const auto durations = reference.durations();
    SessionRecord rec;
    rec.session_id = reference.meta.empty() ? std::string() : reference.meta.front().session_id;
    rec.true_speakers = distinct_count(ref);
    rec.estimated_speakers = distinct_count(hyp.labels);
    rec.der = confusion_der(ref, hyp.labels, durations);
    rec.duration = std::accumulate(durations.begin(), durations.end(), 0.0);
    return rec;
}

/// Diarizes every session (original embeddings when `model` is null) and scores it.
inline EvalReport evaluate_corpus(std::span<const EmbeddingMatrix> sessions, const RefinerModel* model,
                                  const DiarizeConfig& cfg) {
    std::vector<SessionRecord> records;
    records.reserve(sessions.size());
    for (const auto& s : sessions) records.push_back(score_session(s, diarize(s.values, model, cfg)));
    return aggregate(std::move(records));
}

/// Eigenvalues (ascending) of each session's sanitized affinity, paired with its true speaker count.
struct SessionSpectrum {
    Vector eigenvalues;
    int true_speakers = 0;
};

inline std::vector<SessionSpectrum> session_spectra(std::span<const EmbeddingMatrix> sessions,
                                                    const RefinerModel* model, double edge_threshold) {
    std::vector<SessionSpectrum> out;
    out.reserve(sessions.size());
    for (const auto& s : sessions) {
        const auto labels = s.labels();
        out.push_back({s.rows() > 0 ? symmetric_eigenvalues(session_affinity(s.values, model, edge_threshold).s)
                                    : Vector(),
                       distinct_count(labels)});
    }
    return out;
}

struct SweepPoint {
    double threshold = 0.0;
    double mean_error = 0.0;
};

inline std::vector<SweepPoint> count_error_sweep(std::span<const SessionSpectrum> spectra,
                                                 std::span<const double> thresholds) {
    if (spectra.empty() || thresholds.empty()) throw UsageError("sweep needs sessions and thresholds");
    std::vector<SweepPoint> out;
    for (double tau : thresholds) {
        if (!(tau > 0.0)) throw ConfigError("count thresholds must be positive");
        double err = 0.0;
        for (const auto& s : spectra) err += std::abs(count_from_eigenvalues(s.eigenvalues, tau) - s.true_speakers);
        out.push_back({tau, err / static_cast<double>(spectra.size())});
    }
    return out;
}

inline std::vector<SweepPoint> count_error_sweep(std::span<const EmbeddingMatrix> sessions, const RefinerModel* model,
                                                 std::span<const double> thresholds,
                                                 double edge_threshold = kDefaultEdgeThreshold) {
    const auto spectra = session_spectra(sessions, model, edge_threshold);
    return count_error_sweep(std::span<const SessionSpectrum>(spectra), thresholds);
}

/// Mean count error of the eigengap estimator over precomputed spectra.
inline double eigengap_count_error(std::span<const SessionSpectrum> spectra, int max_speakers = 20) {
    if (spectra.empty()) return 0.0;
    double err = 0.0;
    for (const auto& s : spectra) {
        const auto n = s.eigenvalues.size();
        const int k = n <= 1 ? 1 : eigengap_from_eigenvalues(s.eigenvalues, std::min(max_speakers, default_max_speakers(n)));
        err += std::abs(k - s.true_speakers);
    }
    return err / static_cast<double>(spectra.size());
}

/// Evenly spaced thresholds lo, lo + step, ..., up to hi inclusive.
inline std::vector<double> threshold_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(lo > 0.0) || hi < lo) throw ConfigError("invalid threshold grid");
    std::vector<double> out;
    const auto count = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
    for (int i = 0; i <= count; ++i) out.push_back(lo + i * step);
    return out;
}

inline std::string format_report(const EvalReport& r) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %6s %6s %8s\n", "session", "true_k", "est_k", "der");
    out += line;
    for (const auto& s : r.sessions) {
        std::snprintf(line, sizeof line, "%-16s %6d %6d %8.4f\n", s.session_id.c_str(), s.true_speakers,
                      s.estimated_speakers, s.der);
        out += line;
    }
    std::snprintf(line, sizeof line, "DER %.4f  count_error %.4f  sessions %zu\n", r.der, r.count_error_mean,
                  r.sessions.size());
    out += line;
    return out;
}

inline std::string report_csv(const EvalReport& r) {
    std::string out = "session_id,true_k,estimated_k,der,duration\n";
    char line[256];
    for (const auto& s : r.sessions) {
        std::snprintf(line, sizeof line, "%s,%d,%d,%.6f,%.3f\n", s.session_id.c_str(), s.true_speakers,
                      s.estimated_speakers, s.der, s.duration);
        out += line;
    }
    return out;
}

inline std::string sweep_csv(const std::vector<std::pair<std::string, std::vector<SweepPoint>>>& curves) {
    std::string out = "source,threshold,mean_error\n";
    char line[128];
    for (const auto& [source, points] : curves)
        for (const auto& p : points) {
            std::snprintf(line, sizeof line, "%s,%.4f,%.6f\n", source.c_str(), p.threshold, p.mean_error);
            out += line;
        }
    return out;
}

}  // namespace gnndiar
