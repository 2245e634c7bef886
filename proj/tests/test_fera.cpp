#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "fera/fera.hpp"
#include "fera/nn.hpp"
#include "fera/testing/slow_metrics.hpp"

using namespace fera;

namespace {

struct Fixture {
    MlpModel arch;
    Dataset root;
    FilterConfig cfg;

    Fixture() {
        arch = make_mlp({4, 6, 3}, 2024);
        root = synth_dataset(99, 3, 8, 4);  // 24 root samples
    }

    ClientUpdate perturbed(std::uint64_t seed, double scale) const {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, scale);
        ClientUpdate u;
        u.params = arch.params;
        for (auto& v : u.params.values) v += dist(rng);
        u.num_samples = 10;
        return u;
    }
};

MetricSet hand_metrics(std::size_t n) {
    MetricSet m;
    m.sigma.assign(n, 0.0);
    m.delta.assign(n, 0.0);
    m.sigma_norm.assign(n, 0.0);
    m.delta_norm.assign(n, 0.0);
    m.s_comb.assign(n, 0.0);
    m.das.assign(n, 0.0);
    m.mutual_sim.assign(n, 0.0);
    m.r.assign(n, 1.0);
    return m;
}

}  // namespace

TEST_CASE("compute_metrics degenerate round") {
    Fixture fx;
    std::vector<ClientUpdate> updates(3, ClientUpdate{fx.arch.params, 10});
    auto m = compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(m.sigma[i] == 0.0);
        CHECK(m.delta[i] == 0.0);
        CHECK(m.sigma_norm[i] == 0.0);
        CHECK(m.delta_norm[i] == 0.0);
        CHECK(m.das[i] == Catch::Approx(1.0).margin(1e-12));
        CHECK(m.mutual_sim[i] == Catch::Approx(1.0).margin(1e-12));
        CHECK(m.r[i] == 1.0);
    }
}

TEST_CASE("compute_metrics identical pair has unit mutual similarity") {
    Fixture fx;
    std::vector<ClientUpdate> updates{fx.perturbed(1, 0.1), fx.perturbed(1, 0.1),
                                      fx.perturbed(2, 0.1)};
    auto m = compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg);
    CHECK(m.mutual_sim[0] == Catch::Approx(1.0).margin(1e-9));
    CHECK(m.mutual_sim[1] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("compute_metrics single client rejected") {
    Fixture fx;
    std::vector<ClientUpdate> updates{fx.perturbed(1, 0.1)};
    CHECK_THROWS_AS(
        compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg),
        std::invalid_argument);
}

TEST_CASE("compute_metrics matches the slow-path oracle") {
    Fixture fx;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::vector<ClientUpdate> updates;
        for (std::uint64_t c = 0; c < 6; ++c)
            updates.push_back(fx.perturbed(seed * 100 + c, 0.05 + 0.1 * double(c)));
        auto fast =
            compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg);
        auto slow = testing::slow_compute_metrics(updates, fx.arch.params, fx.arch,
                                                  fx.root, fx.cfg);
        CHECK(testing::max_rel_diff(fast, slow) <= 1e-6);
    }
}

TEST_CASE("rep_scores on hand-built 2x2 deltas match the eigen oracle") {
    // 3 "clients" with known 2x2 representation deltas; sigma and delta are
    // checked against full eigendecomposition plus hand normalization.
    std::vector<Matrix> deltas{Matrix(2, 2, {1, 0, 0, 1}),
                               Matrix(2, 2, {1, 3, 3, 5}),
                               Matrix(2, 2, {0, 0, 0, 0})};
    Matrix zero(2, 2);
    std::vector<double> sigma(3), delta(3);
    for (std::size_t i = 0; i < 3; ++i) {
        auto [s, d] = rep_scores(deltas[i], zero);
        sigma[i] = s;
        delta[i] = d;
        double slow_s = deltas[i].rows >= 2
                            ? testing::lambda_max_eigen(
                                  covariance(center_rows(deltas[i])))
                            : 0.0;
        CHECK(std::abs(s - slow_s) <= 1e-9 * std::max(1.0, slow_s));
        CHECK(d == Catch::Approx(frobenius(deltas[i])));
    }
    // hand values: centered [[1,3],[3,5]] -> [[-1,-1],[1,1]], cov [[2,2],[2,2]],
    // lambda_max 4; frobenius sqrt(1+9+9+25) = sqrt(44)
    CHECK(sigma[1] == Catch::Approx(4.0).epsilon(1e-9));
    CHECK(delta[1] == Catch::Approx(std::sqrt(44.0)));

    FilterConfig cfg;
    // hand normalization with the type-7 quartile rule
    auto norm = [&](const std::vector<double>& xs) {
        RobustStats rs = robust_stats(xs);
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i)
            out[i] = (xs[i] - rs.median) / (rs.iqr + cfg.epsilon);
        return out;
    };
    auto sn = norm(sigma);
    auto dn = norm(delta);
    for (std::size_t i = 0; i < 3; ++i) {
        double comb = cfg.w_sigma * sn[i] + cfg.w_delta * dn[i];
        (void)comb;  // hand-checkable; spot value for client 1:
    }
    // sigma = {1, 4, 0} -> median 1, Q25 0.5, Q75 2.5, iqr 2
    CHECK(sn[1] == Catch::Approx((4.0 - 1.0) / 2.0).epsilon(1e-9));
    CHECK(sn[2] == Catch::Approx((0.0 - 1.0) / 2.0).epsilon(1e-9));
}

TEST_CASE("consistency_filter hand rankings") {
    FilterConfig cfg;

    SECTION("single dominating client flagged alone") {
        auto m = hand_metrics(5);
        m.s_comb = {-3, 1, 2, 3, 4};      // client 0 lowest
        m.das = {0.1, 0.8, 0.9, 0.95, 0.99};
        m.mutual_sim = {0.99, 0.2, 0.3, 0.4, 0.5};
        auto flagged = consistency_filter(m, cfg);
        CHECK(flagged == std::set<std::size_t>{0});
    }
    SECTION("all-tied round flags nobody") {
        auto m = hand_metrics(4);
        std::fill(m.s_comb.begin(), m.s_comb.end(), 1.0);
        std::fill(m.das.begin(), m.das.end(), 0.9);
        std::fill(m.mutual_sim.begin(), m.mutual_sim.end(), 0.5);
        auto flagged = consistency_filter(m, cfg);
        CHECK(flagged.empty());
    }
    SECTION("two clients: flags only under full domination") {
        // client 0 lowest comb, lowest das, highest mutual -> rank 0,0,1
        auto m = hand_metrics(2);
        m.s_comb = {-1, 1};
        m.das = {0.2, 0.9};
        m.mutual_sim = {0.9, 0.2};
        auto flagged = consistency_filter(m, cfg);
        CHECK(flagged == std::set<std::size_t>{0});
        // flip one ranking direction and the flag disappears
        m.mutual_sim = {0.2, 0.9};
        CHECK(consistency_filter(m, cfg).empty());
    }
}

TEST_CASE("norm_inflation_filter hand computations") {
    FilterConfig cfg;

    SECTION("zero-MAD round flags the outlier") {
        auto m = hand_metrics(5);
        m.r = {1, 1, 1, 1, 10};
        auto flagged = norm_inflation_filter(m, cfg);
        CHECK(flagged == std::set<std::size_t>{4});
    }
    SECTION("all equal flags nobody") {
        auto m = hand_metrics(4);
        std::fill(m.r.begin(), m.r.end(), 2.5);
        CHECK(norm_inflation_filter(m, cfg).empty());
    }
    SECTION("median 1.05, MAD 0.05, threshold 1.35") {
        auto m = hand_metrics(5);
        m.r = {1, 1.1, 0.9, 1.05, 1.5};
        auto flagged = norm_inflation_filter(m, cfg);
        CHECK(flagged == std::set<std::size_t>{4});
    }
    SECTION("value exactly at the threshold is not flagged") {
        auto m = hand_metrics(5);
        m.r = {1, 1, 1, 1, 1};
        m.r[4] = 1.0;  // median 1, MAD 0 -> threshold 1; 1 > 1 is false
        CHECK(norm_inflation_filter(m, cfg).empty());
    }
}

TEST_CASE("apply_filters union and alpha") {
    FilterConfig cfg;
    auto m = hand_metrics(5);
    // client 1 via consistency: lowest comb + das, highest mutual
    m.s_comb = {1, -5, 2, 3, 4};
    m.das = {0.9, 0.1, 0.8, 0.85, 0.95};
    m.mutual_sim = {0.1, 0.99, 0.2, 0.3, 0.4};
    // client 3 via norm inflation
    m.r = {1, 1, 1, 20, 1};
    auto det = apply_filters(m, cfg);
    CHECK(det.flagged_consistency == std::set<std::size_t>{1});
    CHECK(det.flagged_norm == std::set<std::size_t>{3});
    CHECK(det.flagged == std::set<std::size_t>{1, 3});
    CHECK(det.alpha == std::vector<double>{1.0, 0.1, 1.0, 0.1, 1.0});

    SECTION("no flags -> all alpha 1") {
        auto clean = hand_metrics(3);
        clean.s_comb = {1, 2, 3};
        clean.das = {0.9, 0.8, 0.7};
        clean.mutual_sim = {0.5, 0.5, 0.5};
        auto d2 = apply_filters(clean, cfg);
        CHECK(d2.flagged.empty());
        CHECK(d2.alpha == std::vector<double>(3, 1.0));
    }
}

TEST_CASE("aggregate") {
    FilterConfig cfg;
    FlatParams global;
    global.values = {1.0, 2.0};

    SECTION("equal-and-opposite deltas cancel under beta = 1") {
        std::vector<ClientUpdate> ups(2);
        ups[0].params.values = {1.5, 2.5};
        ups[0].num_samples = 4;
        ups[1].params.values = {0.5, 1.5};
        ups[1].num_samples = 4;
        DetectionResult det;
        det.alpha = {1.0, 1.0};
        auto out = aggregate(ups, global, det, 0.5);
        CHECK(out.values[0] == Catch::Approx(1.0).margin(1e-12));
        CHECK(out.values[1] == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("beta = 0 with everyone flagged leaves the global unchanged") {
        std::vector<ClientUpdate> ups(2);
        ups[0].params.values = {5.0, 5.0};
        ups[0].num_samples = 1;
        ups[1].params.values = {-5.0, 0.0};
        ups[1].num_samples = 1;
        DetectionResult det;
        det.alpha = {0.0, 0.0};
        auto out = aggregate(ups, global, det, 0.5);
        CHECK(out.values == global.values);
    }
    SECTION("hand-computed 3-client weighted clip") {
        // n = [1,1,2], eta = 0.5, client 1 flagged with beta = 0.1
        std::vector<ClientUpdate> ups(3);
        ups[0].params.values = {2.0, 2.0};  // delta (1, 0)
        ups[0].num_samples = 1;
        ups[1].params.values = {1.0, 6.0};  // delta (0, 4)
        ups[1].num_samples = 1;
        ups[2].params.values = {3.0, 4.0};  // delta (2, 2)
        ups[2].num_samples = 2;
        DetectionResult det;
        det.alpha = {1.0, 0.1, 1.0};
        auto out = aggregate(ups, global, det, 0.5);
        // theta0: 1 + 0.5*(0.25*1*1 + 0.25*0.1*0 + 0.5*1*2) = 1.625
        // theta1: 2 + 0.5*(0.25*1*0 + 0.25*0.1*4 + 0.5*1*2) = 2.55
        CHECK(out.values[0] == Catch::Approx(1.625));
        CHECK(out.values[1] == Catch::Approx(2.55));
    }
    SECTION("zero total samples rejected") {
        std::vector<ClientUpdate> ups(1);
        ups[0].params.values = {1.0, 1.0};
        ups[0].num_samples = 0;
        DetectionResult det;
        det.alpha = {1.0};
        CHECK_THROWS_AS(aggregate(ups, global, det, 0.5), std::invalid_argument);
    }
}

TEST_CASE("clip suppression is exactly beta times the contribution") {
    FlatParams global;
    global.values = {0.0, 0.0, 0.0};
    std::vector<ClientUpdate> ups(3);
    for (std::size_t i = 0; i < 3; ++i) {
        ups[i].params.values = {double(i) + 1, -double(i), 0.5};
        ups[i].num_samples = i + 1;
    }
    DetectionResult unflagged;
    unflagged.alpha = {1, 1, 1};
    DetectionResult flagged;
    flagged.alpha = {1, 0.1, 1};
    auto a = aggregate(ups, global, unflagged, 0.5);
    auto b = aggregate(ups, global, flagged, 0.5);
    // The difference between the two aggregates is (1 - beta) times client
    // 1's weighted delta.
    const double w = 0.5 * (2.0 / 6.0);
    for (std::size_t j = 0; j < 3; ++j) {
        double contrib = w * (ups[1].params.values[j] - global.values[j]);
        CHECK(a.values[j] - b.values[j] == Catch::Approx(0.9 * contrib).margin(1e-12));
    }
}

TEST_CASE("filter properties") {
    std::mt19937_64 rng(404);
    std::normal_distribution<double> dist;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    FilterConfig cfg;

    SECTION("rank-transform invariance of the consistency filter") {
        for (int trial = 0; trial < 1000; ++trial) {
            std::size_t n = 3 + rng() % 10;
            auto m = hand_metrics(n);
            for (auto& v : m.s_comb) v = dist(rng);
            for (auto& v : m.das) v = unif(rng);
            for (auto& v : m.mutual_sim) v = 2.0 * unif(rng) - 1.0;
            auto before = consistency_filter(m, cfg);
            // strictly increasing transforms leave ranks untouched
            auto m2 = m;
            for (auto& v : m2.s_comb) v = std::exp(0.5 * v);
            for (auto& v : m2.das) v = std::atan(3.0 * v) + 2.0 * v;
            for (auto& v : m2.mutual_sim) v = v * v * v + 5.0 * v;
            CHECK(consistency_filter(m2, cfg) == before);
        }
    }
    SECTION("permutation equivariance of filters and alpha") {
        for (int trial = 0; trial < 1000; ++trial) {
            std::size_t n = 3 + rng() % 8;
            auto m = hand_metrics(n);
            for (auto& v : m.s_comb) v = dist(rng);
            for (auto& v : m.das) v = unif(rng);
            for (auto& v : m.mutual_sim) v = unif(rng);
            for (auto& v : m.r) v = std::abs(dist(rng)) + 0.1;
            auto det = apply_filters(m, cfg);

            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            auto pm = hand_metrics(n);
            for (std::size_t i = 0; i < n; ++i) {
                pm.s_comb[i] = m.s_comb[perm[i]];
                pm.das[i] = m.das[perm[i]];
                pm.mutual_sim[i] = m.mutual_sim[perm[i]];
                pm.r[i] = m.r[perm[i]];
            }
            auto pdet = apply_filters(pm, cfg);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(pdet.alpha[i] == det.alpha[perm[i]]);
                CHECK(pdet.flagged.count(i) == det.flagged.count(perm[i]));
            }
        }
    }
    SECTION("MAD threshold is strict") {
        for (int trial = 0; trial < 1000; ++trial) {
            std::size_t n = 3 + rng() % 8;
            auto m = hand_metrics(n);
            double base = std::abs(dist(rng)) + 0.5;
            std::fill(m.r.begin(), m.r.end(), base);
            // all values equal the threshold exactly: nothing may be flagged
            CHECK(norm_inflation_filter(m, cfg).empty());
        }
    }
}

TEST_CASE("metric permutation equivariance end to end") {
    Fixture fx;
    std::vector<ClientUpdate> updates;
    for (std::uint64_t c = 0; c < 5; ++c)
        updates.push_back(fx.perturbed(c, 0.02 + 0.05 * double(c)));
    auto m = compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg);

    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<ClientUpdate> permuted;
    for (auto i : perm) permuted.push_back(updates[i]);
    auto pm = compute_metrics(permuted, fx.arch.params, fx.arch, fx.root, fx.cfg);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(pm.sigma[i] == m.sigma[perm[i]]);
        CHECK(pm.delta[i] == m.delta[perm[i]]);
        CHECK(pm.s_comb[i] == m.s_comb[perm[i]]);
        CHECK(pm.das[i] == m.das[perm[i]]);
        CHECK(pm.mutual_sim[i] == m.mutual_sim[perm[i]]);
        CHECK(pm.r[i] == m.r[perm[i]]);
    }
    // aggregated model is invariant
    DetectionResult det = apply_filters(m, fx.cfg);
    DetectionResult pdet = apply_filters(pm, fx.cfg);
    auto a = aggregate(updates, fx.arch.params, det, 0.5);
    auto b = aggregate(permuted, fx.arch.params, pdet, 0.5);
    for (std::size_t j = 0; j < a.values.size(); ++j)
        CHECK(a.values[j] == Catch::Approx(b.values[j]).margin(1e-12));
}

TEST_CASE("das bounds") {
    Fixture fx;
    std::mt19937_64 rng(8);
    std::vector<ClientUpdate> updates;
    for (std::uint64_t c = 0; c < 4; ++c)
        updates.push_back(fx.perturbed(c + 50, 5.0));  // large perturbations
    auto m = compute_metrics(updates, fx.arch.params, fx.arch, fx.root, fx.cfg);
    for (double v : m.das) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // DAS(theta, theta) = 1
    std::vector<ClientUpdate> self{ClientUpdate{fx.arch.params, 1},
                                   ClientUpdate{fx.arch.params, 1}};
    auto ms = compute_metrics(self, fx.arch.params, fx.arch, fx.root, fx.cfg);
    CHECK(ms.das[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("median sigma is robust to a minority of inflated clients") {
    // majority sigma fixed, strict minority made arbitrarily large: the
    // round median, and hence every majority client's spectral ratio, is
    // unchanged.
    FilterConfig cfg;
    std::vector<double> sigma{1.0, 1.1, 0.9, 1.05, 0.95, 1.2, 1.15};
    double med0 = median(sigma);
    auto inflated = sigma;
    inflated[5] = 1e9;
    inflated[6] = 1e12;  // 2 of 7 is a strict minority, both above the median
    CHECK(median(inflated) == med0);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(sigma[i] / median(inflated) == sigma[i] / med0);
}
