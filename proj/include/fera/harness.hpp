#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fera/attacks.hpp"
#include "fera/baselines.hpp"
#include "fera/config.hpp"
#include "fera/data.hpp"
#include "fera/fera.hpp"
#include "fera/nn.hpp"
#include "fera/parallel.hpp"
#include "fera/rng.hpp"

namespace fera {

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> sampled;      // client ids
    std::set<std::size_t> flagged;         // client ids
    double ma = 0.0;
    double ba = 0.0;
    bool attack_active = false;
    std::optional<MetricSet> metrics;      // present for the fera aggregator
    std::optional<DetectionResult> det;
    // detection quality over sampled clients, vs. ground-truth identities
    double precision = 0.0, tpr = 0.0, fpr = 0.0;
    bool precision_valid = false, tpr_valid = false, fpr_valid = false;
    // wall-clock telemetry (not part of the deterministic outputs)
    double train_ms = 0.0, metrics_ms = 0.0, filter_ms = 0.0, aggregate_ms = 0.0;
};

struct ExperimentSummary {
    double final_ma = 0.0;
    double final_ba = 0.0;
    double mean_precision = 0.0;
    double mean_tpr = 0.0;
    double mean_fpr = 0.0;
    std::string config_hash;
};

struct ExperimentState {
    ExperimentConfig cfg;
    MlpModel global;
    std::vector<Dataset> client_clean;     // per-client local split
    std::vector<Dataset> client_poisoned;  // only filled for malicious clients
    std::vector<bool> is_malicious;
    Dataset test_clean;
    Dataset test_backdoor;
    Dataset root;
};

// Invoked after metric computation each round; carries everything needed to
// re-derive the round's metrics independently.
struct RoundHook {
    std::size_t round;
    const std::vector<ClientUpdate>& updates;
    const FlatParams& global;
    const MlpModel& arch;
    const Dataset& root;
    const MetricSet* metrics;        // null unless the fera aggregator ran
    const DetectionResult* det;
};
using RoundCallback = std::function<void(const RoundHook&)>;

inline bool attack_active_in_round(const ExperimentConfig& cfg, std::size_t round) {
    if (cfg.attack.kind == AttackKind::none) return false;
    if (round < cfg.attack_start_round) return false;
    if (cfg.attack_rounds == 0) return true;
    return round < cfg.attack_start_round + cfg.attack_rounds;
}

// Uniform sample without replacement, rejection-resampled until the malicious
// share respects the cap.
inline std::vector<std::size_t> sample_round(const ExperimentConfig& cfg,
                                             const std::vector<bool>& is_malicious,
                                             std::size_t round) {
    auto rng = make_stream(cfg.seed, StreamPurpose::round_sample, round);
    const std::size_t cap = static_cast<std::size_t>(
        cfg.malicious_cap_per_round * double(cfg.clients_per_round));
    std::vector<std::size_t> all(cfg.num_clients);
    std::iota(all.begin(), all.end(), 0);
    for (;;) {
        std::vector<std::size_t> pool = all;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(cfg.clients_per_round);
        std::size_t mal = 0;
        for (auto c : pool)
            if (is_malicious[c]) ++mal;
        if (mal <= cap) {
            std::sort(pool.begin(), pool.end());
            return pool;
        }
    }
}

inline ExperimentState init_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    ExperimentState st;
    st.cfg = cfg;

    Dataset train = synth_dataset(cfg.seed, cfg.num_classes, cfg.per_class_train,
                                  cfg.input_dim);
    // Same class means as the training split, fresh noise draws.
    st.test_clean = synth_dataset(cfg.seed, cfg.num_classes, cfg.per_class_test,
                                  cfg.input_dim, mix64(cfg.seed ^ 0x7e57ULL));
    st.test_backdoor = make_backdoor_testset(st.test_clean, cfg.attack.trigger);
    st.root = make_root(st.test_clean, cfg.root_size, cfg.seed);

    const double alpha = cfg.iid ? 0.0 : cfg.alpha_dirichlet;
    PartitionPlan plan = dirichlet_partition(train, cfg.num_clients, alpha, cfg.seed);
    st.client_clean.reserve(cfg.num_clients);
    for (const auto& idxs : plan.client_indices)
        st.client_clean.push_back(subset(train, idxs));

    // Malicious identities: seeded random subset, fixed for the whole run.
    st.is_malicious.assign(cfg.num_clients, false);
    std::vector<std::size_t> ids(cfg.num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_stream(cfg.seed, StreamPurpose::round_sample, 0, 0xdeadULL);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t k = 0; k < cfg.malicious_count(); ++k)
        st.is_malicious[ids[k]] = true;

    st.client_poisoned.resize(cfg.num_clients);
    if (cfg.attack.kind != AttackKind::none) {
        for (std::size_t c = 0; c < cfg.num_clients; ++c)
            if (st.is_malicious[c])
                st.client_poisoned[c] = poison_local_data(
                    cfg.attack, st.client_clean[c], mix64(cfg.seed ^ c));
    }

    st.global = make_mlp(cfg.model_dims, cfg.seed);
    if (cfg.rep_layer != 0) st.global.rep_layer = cfg.rep_layer;
    return st;
}

namespace detail {

inline std::uint64_t epoch_seed(const ExperimentConfig& cfg, std::size_t round,
                                std::size_t client, std::size_t epoch,
                                bool proxy = false) {
    std::uint64_t s = mix64(cfg.seed ^ (round * 0x9e3779b9ULL));
    s = mix64(s ^ (client * 0x85ebca6bULL + epoch));
    if (proxy) s = mix64(s ^ 0xbe5161a5ULL);
    return s;
}

inline MlpModel train_local(const ExperimentState& st, std::size_t client,
                            const Dataset& data, std::size_t round,
                            bool proxy = false) {
    MlpModel local = st.global;
    Batch batch{data.inputs, data.labels};
    for (std::size_t e = 0; e < st.cfg.local_epochs; ++e)
        sgd_epoch(local, batch, st.cfg.client_lr, st.cfg.batch_size,
                  epoch_seed(st.cfg, round, client, e, proxy));
    return local;
}

struct DetStats {
    double precision = 0, tpr = 0, fpr = 0;
    bool p_valid = false, t_valid = false, f_valid = false;
};

inline DetStats detection_stats(const std::vector<std::size_t>& sampled,
                                const std::set<std::size_t>& flagged_ids,
                                const std::vector<bool>& is_malicious) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (auto c : sampled) {
        const bool flagged = flagged_ids.count(c) > 0;
        if (is_malicious[c]) {
            flagged ? ++tp : ++fn;
        } else {
            flagged ? ++fp : ++tn;
        }
    }
    DetStats s;
    if (tp + fp > 0) { s.precision = double(tp) / double(tp + fp); s.p_valid = true; }
    if (tp + fn > 0) { s.tpr = double(tp) / double(tp + fn); s.t_valid = true; }
    if (fp + tn > 0) { s.fpr = double(fp) / double(fp + tn); s.f_valid = true; }
    return s;
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace detail

inline RoundRecord run_round(ExperimentState& st, std::size_t round,
                             const RoundCallback& callback = {}) {
    const ExperimentConfig& cfg = st.cfg;
    RoundRecord rec;
    rec.round = round;
    rec.attack_active = attack_active_in_round(cfg, round);
    rec.sampled = sample_round(cfg, st.is_malicious, round);

    const std::size_t n = rec.sampled.size();
    std::vector<ClientUpdate> updates(n);
    auto t0 = std::chrono::steady_clock::now();
    parallel_for(n, [&](std::size_t k) {
        const std::size_t c = rec.sampled[k];
        const bool attacking = rec.attack_active && st.is_malicious[c];
        const Dataset& data =
            attacking ? st.client_poisoned[c] : st.client_clean[c];
        MlpModel local = detail::train_local(st, c, data, round);

        FlatParams submitted = local.params;
        if (attacking && cfg.attack.kind != AttackKind::badnet &&
            cfg.attack.kind != AttackKind::dba) {
            RoundContext ctx{round, cfg.attack_start_round, &st.global.params};
            if (cfg.attack.kind == AttackKind::adaptive_badnet) {
                MlpModel proxy =
                    detail::train_local(st, c, st.client_clean[c], round, true);
                submitted =
                    transform_update(cfg.attack, local.params, ctx, &proxy.params);
            } else {
                submitted = transform_update(cfg.attack, local.params, ctx);
            }
        }
        updates[k] = ClientUpdate{std::move(submitted), data.size()};
    });
    rec.train_ms = detail::ms_since(t0);

    DetectionResult det;
    det.alpha.assign(n, 1.0);
    FlatParams new_global;
    switch (cfg.aggregator) {
        case AggregatorKind::fera: {
            t0 = std::chrono::steady_clock::now();
            MetricSet m = compute_metrics(updates, st.global.params, st.global,
                                          st.root, cfg.filter);
            rec.metrics_ms = detail::ms_since(t0);
            t0 = std::chrono::steady_clock::now();
            det = apply_filters(m, cfg.filter);
            rec.filter_ms = detail::ms_since(t0);
            t0 = std::chrono::steady_clock::now();
            new_global = aggregate(updates, st.global.params, det, cfg.server_eta);
            rec.aggregate_ms = detail::ms_since(t0);
            if (callback)
                callback(RoundHook{round, updates, st.global.params, st.global,
                                   st.root, &m, &det});
            rec.metrics = std::move(m);
            rec.det = det;
            break;
        }
        case AggregatorKind::fedavg:
            t0 = std::chrono::steady_clock::now();
            new_global = fedavg(updates, st.global.params, cfg.server_eta);
            rec.aggregate_ms = detail::ms_since(t0);
            if (callback)
                callback(RoundHook{round, updates, st.global.params, st.global,
                                   st.root, nullptr, nullptr});
            break;
        case AggregatorKind::multikrum: {
            std::size_t f = cfg.multikrum_f;
            if (f == 0)
                f = static_cast<std::size_t>(std::ceil(0.1 * double(n)));
            t0 = std::chrono::steady_clock::now();
            new_global = multi_krum(updates, st.global.params, cfg.server_eta, f,
                                    n - f);
            rec.aggregate_ms = detail::ms_since(t0);
            break;
        }
        case AggregatorKind::coordwise_median:
            t0 = std::chrono::steady_clock::now();
            new_global = coordwise_median(updates, st.global.params, cfg.server_eta);
            rec.aggregate_ms = detail::ms_since(t0);
            break;
    }
    st.global.params = std::move(new_global);

    for (std::size_t k = 0; k < n; ++k)
        if (det.flagged.count(k)) rec.flagged.insert(rec.sampled[k]);
    auto ds = detail::detection_stats(rec.sampled, rec.flagged, st.is_malicious);
    rec.precision = ds.precision;
    rec.tpr = ds.tpr;
    rec.fpr = ds.fpr;
    rec.precision_valid = ds.p_valid;
    rec.tpr_valid = ds.t_valid;
    rec.fpr_valid = ds.f_valid;

    Batch clean{st.test_clean.inputs, st.test_clean.labels};
    Batch poisoned{st.test_backdoor.inputs, st.test_backdoor.labels};
    rec.ma = evaluate(st.global, clean);
    rec.ba = st.test_backdoor.size() > 0 ? evaluate(st.global, poisoned) : 0.0;
    return rec;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string join_ids(const std::vector<std::size_t>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

}  // namespace detail

inline void write_rounds_csv(const std::vector<RoundRecord>& records,
                             const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "round,ma,ba,attack_active,sampled,flagged,precision,tpr,fpr\n";
    for (const auto& r : records) {
        std::vector<std::size_t> flagged(r.flagged.begin(), r.flagged.end());
        out << r.round << ',' << detail::fmt_double(r.ma) << ','
            << detail::fmt_double(r.ba) << ',' << (r.attack_active ? 1 : 0) << ','
            << detail::join_ids(r.sampled) << ',' << detail::join_ids(flagged) << ','
            << (r.precision_valid ? detail::fmt_double(r.precision) : "") << ','
            << (r.tpr_valid ? detail::fmt_double(r.tpr) : "") << ','
            << (r.fpr_valid ? detail::fmt_double(r.fpr) : "") << "\n";
    }
}

inline void write_metrics_csv(const std::vector<RoundRecord>& records,
                              const std::vector<bool>& is_malicious,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "round,client_id,is_malicious_truth,sigma,delta,sigma_norm,delta_norm,"
           "s_comb,das,mutual_sim,r,flagged_c,flagged_n,alpha\n";
    for (const auto& rec : records) {
        if (!rec.metrics) continue;
        const MetricSet& m = *rec.metrics;
        const DetectionResult& det = *rec.det;
        for (std::size_t k = 0; k < m.size(); ++k) {
            const std::size_t c = rec.sampled[k];
            out << rec.round << ',' << c << ',' << (is_malicious[c] ? 1 : 0) << ','
                << detail::fmt_double(m.sigma[k]) << ','
                << detail::fmt_double(m.delta[k]) << ','
                << detail::fmt_double(m.sigma_norm[k]) << ','
                << detail::fmt_double(m.delta_norm[k]) << ','
                << detail::fmt_double(m.s_comb[k]) << ','
                << detail::fmt_double(m.das[k]) << ','
                << detail::fmt_double(m.mutual_sim[k]) << ','
                << detail::fmt_double(m.r[k]) << ','
                << (det.flagged_consistency.count(k) ? 1 : 0) << ','
                << (det.flagged_norm.count(k) ? 1 : 0) << ','
                << detail::fmt_double(det.alpha[k]) << "\n";
        }
    }
}

inline void write_timings_csv(const std::vector<RoundRecord>& records,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "round,train_ms,metrics_ms,filter_ms,aggregate_ms\n";
    for (const auto& r : records)
        out << r.round << ',' << detail::fmt_double(r.train_ms) << ','
            << detail::fmt_double(r.metrics_ms) << ','
            << detail::fmt_double(r.filter_ms) << ','
            << detail::fmt_double(r.aggregate_ms) << "\n";
}

inline ExperimentSummary summarize(const ExperimentConfig& cfg,
                                   const std::vector<RoundRecord>& records,
                                   double initial_ma, double initial_ba) {
    ExperimentSummary s;
    s.config_hash = config_hash(cfg);
    s.final_ma = initial_ma;
    s.final_ba = initial_ba;
    if (!records.empty()) {
        s.final_ma = records.back().ma;
        s.final_ba = records.back().ba;
    }
    double psum = 0, tsum = 0, fsum = 0;
    std::size_t pn = 0, tn = 0, fn = 0;
    for (const auto& r : records) {
        if (!r.attack_active) continue;
        if (r.precision_valid) { psum += r.precision; ++pn; }
        if (r.tpr_valid) { tsum += r.tpr; ++tn; }
        if (r.fpr_valid) { fsum += r.fpr; ++fn; }
    }
    if (pn) s.mean_precision = psum / double(pn);
    if (tn) s.mean_tpr = tsum / double(tn);
    if (fn) s.mean_fpr = fsum / double(fn);
    return s;
}

inline void write_summary_json(const ExperimentSummary& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "{\n"
        << "  \"final_ma\": " << detail::fmt_double(s.final_ma) << ",\n"
        << "  \"final_ba\": " << detail::fmt_double(s.final_ba) << ",\n"
        << "  \"mean_precision\": " << detail::fmt_double(s.mean_precision) << ",\n"
        << "  \"mean_tpr\": " << detail::fmt_double(s.mean_tpr) << ",\n"
        << "  \"mean_fpr\": " << detail::fmt_double(s.mean_fpr) << ",\n"
        << "  \"config_hash\": \"" << s.config_hash << "\"\n"
        << "}\n";
}

struct ExperimentResult {
    std::vector<RoundRecord> records;
    ExperimentSummary summary;
};

// Full experiment: deterministic under cfg, writes rounds.csv, metrics.csv,
// timings.csv and summary.json into cfg.output_dir (unless write_outputs is
// false, for in-memory use by tests).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       bool write_outputs = true,
                                       const RoundCallback& callback = {}) {
    ExperimentState st = init_experiment(cfg);

    Batch clean{st.test_clean.inputs, st.test_clean.labels};
    Batch poisoned{st.test_backdoor.inputs, st.test_backdoor.labels};
    const double initial_ma = evaluate(st.global, clean);
    const double initial_ba =
        st.test_backdoor.size() > 0 ? evaluate(st.global, poisoned) : 0.0;

    ExperimentResult res;
    res.records.reserve(cfg.rounds);
    for (std::size_t round = 1; round <= cfg.rounds; ++round)
        res.records.push_back(run_round(st, round, callback));
    res.summary = summarize(cfg, res.records, initial_ma, initial_ba);

    if (write_outputs) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(cfg.output_dir, ec);
        if (ec)
            throw std::runtime_error("cannot create output dir " + cfg.output_dir +
                                     ": " + ec.message());
        const fs::path dir(cfg.output_dir);
        write_rounds_csv(res.records, (dir / "rounds.csv").string());
        write_metrics_csv(res.records, st.is_malicious, (dir / "metrics.csv").string());
        write_timings_csv(res.records, (dir / "timings.csv").string());
        write_summary_json(res.summary, (dir / "summary.json").string());
    }
    return res;
}

}  // namespace fera
