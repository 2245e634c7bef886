#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "fera/fera.hpp"
#include "fera/linalg.hpp"
#include "fera/nn.hpp"

namespace fera {

enum class AggregatorKind { fedavg, multikrum, coordwise_median, fera };

// Plain weighted FedAvg: graduated aggregation with every clip factor at 1.
inline FlatParams fedavg(const std::vector<ClientUpdate>& updates,
                         const FlatParams& global, double eta) {
    if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
    DetectionResult det;
    det.alpha.assign(updates.size(), 1.0);
    return aggregate(updates, global, det, eta);
}

// Multi-Krum selection: score_i = sum of squared L2 distances to the
// N - f - 2 nearest other updates; keep the m lowest-score clients.
inline std::set<std::size_t> multi_krum_select(
    const std::vector<ClientUpdate>& updates, std::size_t f, std::size_t m) {
    const std::size_t n = updates.size();
    if (n < 2 * f + 3)
        throw std::invalid_argument("multi_krum: requires N >= 2f + 3");
    if (m == 0 || m > n - f)
        throw std::invalid_argument("multi_krum: requires 1 <= m <= N - f");

    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            const auto& a = updates[i].params.values;
            const auto& b = updates[j].params.values;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double d = a[k] - b[k];
                acc += d * d;
            }
            dist[i][j] = acc;
            dist[j][i] = acc;
        }

    const std::size_t neighbors = n - f - 2;
    std::vector<std::pair<double, std::size_t>> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        row.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) row.push_back(dist[i][j]);
        std::sort(row.begin(), row.end());
        double s = 0.0;
        for (std::size_t k = 0; k < neighbors; ++k) s += row[k];
        scores[i] = {s, i};
    }
    std::sort(scores.begin(), scores.end());
    std::set<std::size_t> selected;
    for (std::size_t k = 0; k < m; ++k) selected.insert(scores[k].second);
    return selected;
}

// Multi-Krum aggregation: equal-weight average of the selected clients'
// deltas, applied with the server learning rate.
inline FlatParams multi_krum(const std::vector<ClientUpdate>& updates,
                             const FlatParams& global, double eta,
                             std::size_t f, std::size_t m) {
    auto selected = multi_krum_select(updates, f, m);
    FlatParams out = global;
    const double w = eta / double(selected.size());
    for (auto i : selected) {
        const auto& v = updates[i].params.values;
        for (std::size_t j = 0; j < v.size(); ++j)
            out.values[j] += w * (v[j] - global.values[j]);
    }
    return out;
}

// Coordinate-wise median of client deltas, applied as the aggregate delta.
inline FlatParams coordwise_median(const std::vector<ClientUpdate>& updates,
                                   const FlatParams& global, double eta) {
    if (updates.empty()) throw std::invalid_argument("coordwise_median: no updates");
    const std::size_t p = global.values.size();
    FlatParams out = global;
    std::vector<double> column(updates.size());
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < updates.size(); ++i)
            column[i] = updates[i].params.values[j] - global.values[j];
        std::vector<double> sorted = column;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        const double med = n % 2 == 1 ? sorted[n / 2]
                                      : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        out.values[j] += eta * med;
    }
    return out;
}

}  // namespace fera
