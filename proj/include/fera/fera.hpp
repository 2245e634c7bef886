#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <stdexcept>
#include <vector>

#include "fera/data.hpp"
#include "fera/linalg.hpp"
#include "fera/nn.hpp"

namespace fera {

// Per-round, per-client metric values. Indexed by position in the round's
// client list.
struct MetricSet {
    std::vector<double> sigma;       // spectral score: lambda_max of centered cov
    std::vector<double> delta;       // spatial score: Frobenius of the rep delta
    std::vector<double> sigma_norm;  // robust z-scores
    std::vector<double> delta_norm;
    std::vector<double> s_comb;      // weighted combination
    std::vector<double> das;         // directional score in [0,1]
    std::vector<double> mutual_sim;  // max cosine to any peer
    std::vector<double> r;           // sigma over round median sigma

    std::size_t size() const { return sigma.size(); }
};

struct FilterConfig {
    double tau_comb = 0.50;
    double tau_das = 0.50;
    double tau_mutual = 0.60;
    double w_sigma = 0.6;
    double w_delta = 0.4;
    double mad_k = 6.0;
    double beta = 0.1;       // clip factor for flagged clients
    double epsilon = kEpsilon;
    bool filters_enabled = true;
};

struct DetectionResult {
    std::set<std::size_t> flagged_consistency;
    std::set<std::size_t> flagged_norm;
    std::set<std::size_t> flagged;      // union
    std::vector<double> alpha;          // per-client clip factor
};

struct ClientUpdate {
    FlatParams params;
    std::size_t num_samples = 0;
};

namespace detail {

// Robust z-score: (x - median) / (IQR + eps).
inline std::vector<double> robust_normalize(const std::vector<double>& xs,
                                            double eps) {
    RobustStats rs = robust_stats(xs);
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        out[i] = (xs[i] - rs.median) / (rs.iqr + eps);
    return out;
}

}  // namespace detail

// Spectral and spatial scores of one client's representation delta.
// Degenerate covariance (single root sample) maps to sigma = 0.
inline std::pair<double, double> rep_scores(const Matrix& rep_client,
                                            const Matrix& rep_global) {
    Matrix diff(rep_client.rows, rep_client.cols);
    for (std::size_t i = 0; i < diff.data.size(); ++i)
        diff.data[i] = rep_client.data[i] - rep_global.data[i];
    double spatial = frobenius(diff);
    double spectral = 0.0;
    if (diff.rows >= 2)
        spectral = lambda_max(covariance(center_rows(diff)));
    return {spectral, spatial};
}

// Max cosine similarity of each client's parameters to any peer's.
inline std::vector<double> mutual_similarities(
    const std::vector<ClientUpdate>& updates) {
    const std::size_t n = updates.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            best = std::max(best, cosine(updates[i].params.values,
                                         updates[j].params.values));
        }
        out[i] = best;
    }
    return out;
}

// Metric computation over one round's submitted models. `arch` supplies the
// layer shapes used to interpret each flat parameter vector.
inline MetricSet compute_metrics(const std::vector<ClientUpdate>& updates,
                                 const FlatParams& global, const MlpModel& arch,
                                 const Dataset& root, const FilterConfig& cfg) {
    const std::size_t n = updates.size();
    if (n < 2)
        throw std::invalid_argument("compute_metrics: need >= 2 clients");
    for (const auto& u : updates)
        if (u.params.values.size() != global.values.size())
            throw std::invalid_argument("compute_metrics: parameter length mismatch");

    MlpModel probe = arch;
    probe.params = global;
    Matrix rep_global = forward(probe, root.inputs).penultimate;

    MetricSet m;
    m.sigma.resize(n);
    m.delta.resize(n);
    m.das.resize(n);
    m.mutual_sim.resize(n);
    m.r.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        probe.params = updates[i].params;
        Matrix rep_i = forward(probe, root.inputs).penultimate;
        auto [spectral, spatial] = rep_scores(rep_i, rep_global);
        m.sigma[i] = spectral;
        m.delta[i] = spatial;
        m.das[i] =
            (cosine(updates[i].params.values, global.values) + 1.0) / 2.0;
    }

    m.sigma_norm = detail::robust_normalize(m.sigma, cfg.epsilon);
    m.delta_norm = detail::robust_normalize(m.delta, cfg.epsilon);
    m.s_comb.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        m.s_comb[i] = cfg.w_sigma * m.sigma_norm[i] + cfg.w_delta * m.delta_norm[i];

    m.mutual_sim = mutual_similarities(updates);

    const double med_sigma = median(m.sigma);
    for (std::size_t i = 0; i < n; ++i)
        // degenerate round (all-zero spectra): no norm-inflation signal
        m.r[i] = med_sigma < cfg.epsilon ? 1.0 : m.sigma[i] / med_sigma;

    return m;
}

// Average fractional rank in [0,1]: (strictly smaller + 0.5 * ties excluding
// self) / (N - 1). Scale-free in N and benign under full ties.
inline std::vector<double> fractional_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<double> ranks(n, 0.0);
    if (n < 2) return ranks;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t smaller = 0, ties = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (xs[j] < xs[i]) ++smaller;
            else if (xs[j] == xs[i]) ++ties;
        }
        ranks[i] = (double(smaller) + 0.5 * double(ties)) / double(n - 1);
    }
    return ranks;
}

// Consistency Filter: low combined score, low directional alignment, high
// similarity to peers, all judged by within-round fractional rank.
inline std::set<std::size_t> consistency_filter(const MetricSet& m,
                                                const FilterConfig& cfg) {
    auto rank_comb = fractional_ranks(m.s_comb);
    auto rank_das = fractional_ranks(m.das);
    auto rank_mutual = fractional_ranks(m.mutual_sim);
    std::set<std::size_t> flagged;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (rank_comb[i] <= cfg.tau_comb && rank_das[i] <= cfg.tau_das &&
            rank_mutual[i] >= cfg.tau_mutual)
            flagged.insert(i);
    return flagged;
}

// Norm-Inflation Filter: spectral ratio beyond median + k * MAD (strict).
inline std::set<std::size_t> norm_inflation_filter(const MetricSet& m,
                                                   const FilterConfig& cfg) {
    RobustStats rs = robust_stats(m.r);
    const double threshold = rs.median + cfg.mad_k * rs.mad;
    std::set<std::size_t> flagged;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.r[i] > threshold) flagged.insert(i);
    return flagged;
}

inline DetectionResult apply_filters(const MetricSet& m, const FilterConfig& cfg) {
    DetectionResult det;
    if (cfg.filters_enabled) {
        det.flagged_consistency = consistency_filter(m, cfg);
        det.flagged_norm = norm_inflation_filter(m, cfg);
        det.flagged = det.flagged_consistency;
        det.flagged.insert(det.flagged_norm.begin(), det.flagged_norm.end());
    }
    det.alpha.assign(m.size(), 1.0);
    for (auto i : det.flagged) det.alpha[i] = cfg.beta;
    return det;
}

// Graduated aggregation: theta' = theta + eta * sum_i (n_i / sum_j n_j) *
// alpha_i * (theta_i - theta). With beta = 1 this is plain weighted FedAvg.
inline FlatParams aggregate(const std::vector<ClientUpdate>& updates,
                            const FlatParams& global, const DetectionResult& det,
                            double eta) {
    if (eta <= 0.0) throw std::invalid_argument("aggregate: eta > 0 required");
    double total = 0.0;
    for (const auto& u : updates) total += double(u.num_samples);
    if (total <= 0.0)
        throw std::invalid_argument("aggregate: zero total samples");

    FlatParams out = global;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const double w =
            eta * (double(updates[i].num_samples) / total) * det.alpha[i];
        const auto& v = updates[i].params.values;
        for (std::size_t j = 0; j < v.size(); ++j)
            out.values[j] += w * (v[j] - global.values[j]);
    }
    return out;
}

}  // namespace fera
