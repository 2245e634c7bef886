#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fera/attacks.hpp"
#include "fera/baselines.hpp"
#include "fera/fera.hpp"

namespace fera {

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::size_t num_clients = 100;
    std::size_t clients_per_round = 10;
    double malicious_fraction = 0.10;
    double malicious_cap_per_round = 0.40;
    std::size_t rounds = 60;
    std::size_t warmup_rounds = 20;
    std::size_t attack_start_round = 21;  // 1-based; first attacking round
    std::size_t attack_rounds = 0;        // 0 = through the last round

    double alpha_dirichlet = 0.5;
    bool iid = false;

    std::vector<std::size_t> model_dims = {32, 64, 32, 4};
    std::size_t rep_layer = 0;  // 0 = last hidden layer
    std::size_t local_epochs = 2;
    std::size_t batch_size = 16;
    double client_lr = 0.1;
    double server_eta = 0.5;
    std::size_t root_size = 64;

    AggregatorKind aggregator = AggregatorKind::fera;
    std::size_t multikrum_f = 0;  // 0 = ceil(0.1 * sampled)
    FilterConfig filter;
    AttackSpec attack;

    // synthetic dataset
    int num_classes = 4;
    std::size_t per_class_train = 300;
    std::size_t per_class_test = 100;
    std::size_t input_dim = 32;

    std::string output_dir = "out";

    std::size_t malicious_count() const {
        return static_cast<std::size_t>(malicious_fraction * double(num_clients));
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(static_cast<std::size_t>(std::stoull(trim(tok))));
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

inline AggregatorKind parse_aggregator(const std::string& v) {
    if (v == "fedavg") return AggregatorKind::fedavg;
    if (v == "multikrum") return AggregatorKind::multikrum;
    if (v == "coordwise_median") return AggregatorKind::coordwise_median;
    if (v == "fera") return AggregatorKind::fera;
    throw std::runtime_error("config: unknown aggregator: " + v);
}

inline AttackKind parse_attack_kind(const std::string& v) {
    if (v == "none") return AttackKind::none;
    if (v == "badnet") return AttackKind::badnet;
    if (v == "scaling") return AttackKind::scaling;
    if (v == "dba") return AttackKind::dba;
    if (v == "adaptive_badnet") return AttackKind::adaptive_badnet;
    throw std::runtime_error("config: unknown attack kind: " + v);
}

inline const char* aggregator_name(AggregatorKind k) {
    switch (k) {
        case AggregatorKind::fedavg: return "fedavg";
        case AggregatorKind::multikrum: return "multikrum";
        case AggregatorKind::coordwise_median: return "coordwise_median";
        case AggregatorKind::fera: return "fera";
    }
    return "?";
}

inline const char* attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::badnet: return "badnet";
        case AttackKind::scaling: return "scaling";
        case AttackKind::dba: return "dba";
        case AttackKind::adaptive_badnet: return "adaptive_badnet";
    }
    return "?";
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.malicious_fraction >= 0.5)
        throw std::runtime_error("config: malicious_fraction must be < 0.5");
    if (cfg.clients_per_round == 0 || cfg.clients_per_round > cfg.num_clients)
        throw std::runtime_error("config: clients_per_round must be in [1, num_clients]");
    if (cfg.model_dims.size() < 2)
        throw std::runtime_error("config: model_dims needs at least input and output");
    if (cfg.model_dims.front() != cfg.input_dim)
        throw std::runtime_error("config: model_dims[0] must equal input_dim");
    if (cfg.model_dims.back() != static_cast<std::size_t>(cfg.num_classes))
        throw std::runtime_error("config: model_dims must end at num_classes");
    if (cfg.rep_layer >= cfg.model_dims.size() - 1)
        throw std::runtime_error("config: rep_layer must name a hidden layer");
    if (std::abs(cfg.filter.w_sigma + cfg.filter.w_delta - 1.0) > 1e-9)
        throw std::runtime_error("config: filter weights must sum to 1");
    if (cfg.filter.beta < 0.0 || cfg.filter.beta > 1.0)
        throw std::runtime_error("config: filter.beta must be in [0,1]");
    // The sampling cap must be satisfiable by the benign population.
    const std::size_t cap = static_cast<std::size_t>(
        cfg.malicious_cap_per_round * double(cfg.clients_per_round));
    const std::size_t benign = cfg.num_clients - cfg.malicious_count();
    if (benign + cap < cfg.clients_per_round)
        throw std::runtime_error("config: malicious cap infeasible for this population");
    if (cfg.attack.kind == AttackKind::scaling && cfg.attack.scale_factor < 1.0)
        throw std::runtime_error("config: scale_factor must be >= 1");
    if (cfg.attack.dba_total == 0 || cfg.attack.dba_index >= cfg.attack.dba_total)
        throw std::runtime_error("config: bad dba shard");
    for (auto c : cfg.attack.trigger.coordinates)
        if (c >= cfg.input_dim)
            throw std::runtime_error("config: trigger coordinate out of range");
}

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "num_clients") cfg.num_clients = std::stoull(value);
    else if (key == "clients_per_round") cfg.clients_per_round = std::stoull(value);
    else if (key == "malicious_fraction") cfg.malicious_fraction = std::stod(value);
    else if (key == "malicious_cap_per_round") cfg.malicious_cap_per_round = std::stod(value);
    else if (key == "rounds") cfg.rounds = std::stoull(value);
    else if (key == "warmup_rounds") cfg.warmup_rounds = std::stoull(value);
    else if (key == "attack_start_round") cfg.attack_start_round = std::stoull(value);
    else if (key == "attack_rounds") cfg.attack_rounds = std::stoull(value);
    else if (key == "alpha_dirichlet") cfg.alpha_dirichlet = std::stod(value);
    else if (key == "iid") cfg.iid = parse_bool(value, key);
    else if (key == "model_dims") cfg.model_dims = detail::parse_size_list(value);
    else if (key == "rep_layer") cfg.rep_layer = std::stoull(value);
    else if (key == "local_epochs") cfg.local_epochs = std::stoull(value);
    else if (key == "batch_size") cfg.batch_size = std::stoull(value);
    else if (key == "client_lr") cfg.client_lr = std::stod(value);
    else if (key == "server_eta") cfg.server_eta = std::stod(value);
    else if (key == "root_size") cfg.root_size = std::stoull(value);
    else if (key == "aggregator") cfg.aggregator = detail::parse_aggregator(value);
    else if (key == "multikrum_f") cfg.multikrum_f = std::stoull(value);
    else if (key == "num_classes") cfg.num_classes = std::stoi(value);
    else if (key == "per_class_train") cfg.per_class_train = std::stoull(value);
    else if (key == "per_class_test") cfg.per_class_test = std::stoull(value);
    else if (key == "input_dim") cfg.input_dim = std::stoull(value);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "attack.kind") cfg.attack.kind = detail::parse_attack_kind(value);
    else if (key == "attack.scale_factor") cfg.attack.scale_factor = std::stod(value);
    else if (key == "attack.dba_index") cfg.attack.dba_index = std::stoull(value);
    else if (key == "attack.dba_total") cfg.attack.dba_total = std::stoull(value);
    else if (key == "attack.trigger.coordinates")
        cfg.attack.trigger.coordinates = detail::parse_size_list(value);
    else if (key == "attack.trigger.value") cfg.attack.trigger.value = std::stod(value);
    else if (key == "attack.trigger.target_label")
        cfg.attack.trigger.target_label = std::stoi(value);
    else if (key == "attack.trigger.poison_fraction")
        cfg.attack.trigger.poison_fraction = std::stod(value);
    else if (key == "attack.adaptive.clip_reduction")
        cfg.attack.adaptive.clip_reduction = std::stod(value);
    else if (key == "attack.adaptive.blend") cfg.attack.adaptive.blend = std::stod(value);
    else if (key == "attack.adaptive.ramp_rounds")
        cfg.attack.adaptive.ramp_rounds = std::stoi(value);
    else if (key == "filter.tau_comb") cfg.filter.tau_comb = std::stod(value);
    else if (key == "filter.tau_das") cfg.filter.tau_das = std::stod(value);
    else if (key == "filter.tau_mutual") cfg.filter.tau_mutual = std::stod(value);
    else if (key == "filter.w_sigma") cfg.filter.w_sigma = std::stod(value);
    else if (key == "filter.w_delta") cfg.filter.w_delta = std::stod(value);
    else if (key == "filter.mad_k") cfg.filter.mad_k = std::stod(value);
    else if (key == "filter.beta") cfg.filter.beta = std::stod(value);
    else if (key == "filter.enabled") cfg.filter.filters_enabled = parse_bool(value, key);
    else throw std::runtime_error("config: unknown key: " + key);
}

// `key = value` lines, '#' comments. Unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     ": expected key = value");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse_config(in);
}

// Canonical serialization; also the input of the config hash.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "seed = " << cfg.seed << "\n";
    out << "num_clients = " << cfg.num_clients << "\n";
    out << "clients_per_round = " << cfg.clients_per_round << "\n";
    out << "malicious_fraction = " << cfg.malicious_fraction << "\n";
    out << "malicious_cap_per_round = " << cfg.malicious_cap_per_round << "\n";
    out << "rounds = " << cfg.rounds << "\n";
    out << "warmup_rounds = " << cfg.warmup_rounds << "\n";
    out << "attack_start_round = " << cfg.attack_start_round << "\n";
    out << "attack_rounds = " << cfg.attack_rounds << "\n";
    out << "alpha_dirichlet = " << cfg.alpha_dirichlet << "\n";
    out << "iid = " << (cfg.iid ? "true" : "false") << "\n";
    out << "model_dims = ";
    for (std::size_t i = 0; i < cfg.model_dims.size(); ++i)
        out << (i ? "," : "") << cfg.model_dims[i];
    out << "\n";
    out << "rep_layer = " << cfg.rep_layer << "\n";
    out << "local_epochs = " << cfg.local_epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "client_lr = " << cfg.client_lr << "\n";
    out << "server_eta = " << cfg.server_eta << "\n";
    out << "root_size = " << cfg.root_size << "\n";
    out << "aggregator = " << detail::aggregator_name(cfg.aggregator) << "\n";
    out << "multikrum_f = " << cfg.multikrum_f << "\n";
    out << "num_classes = " << cfg.num_classes << "\n";
    out << "per_class_train = " << cfg.per_class_train << "\n";
    out << "per_class_test = " << cfg.per_class_test << "\n";
    out << "input_dim = " << cfg.input_dim << "\n";
    out << "attack.kind = " << detail::attack_name(cfg.attack.kind) << "\n";
    out << "attack.scale_factor = " << cfg.attack.scale_factor << "\n";
    out << "attack.dba_index = " << cfg.attack.dba_index << "\n";
    out << "attack.dba_total = " << cfg.attack.dba_total << "\n";
    out << "attack.trigger.coordinates = ";
    for (std::size_t i = 0; i < cfg.attack.trigger.coordinates.size(); ++i)
        out << (i ? "," : "") << cfg.attack.trigger.coordinates[i];
    out << "\n";
    out << "attack.trigger.value = " << cfg.attack.trigger.value << "\n";
    out << "attack.trigger.target_label = " << cfg.attack.trigger.target_label << "\n";
    out << "attack.trigger.poison_fraction = " << cfg.attack.trigger.poison_fraction << "\n";
    out << "attack.adaptive.clip_reduction = " << cfg.attack.adaptive.clip_reduction << "\n";
    out << "attack.adaptive.blend = " << cfg.attack.adaptive.blend << "\n";
    out << "attack.adaptive.ramp_rounds = " << cfg.attack.adaptive.ramp_rounds << "\n";
    out << "filter.tau_comb = " << cfg.filter.tau_comb << "\n";
    out << "filter.tau_das = " << cfg.filter.tau_das << "\n";
    out << "filter.tau_mutual = " << cfg.filter.tau_mutual << "\n";
    out << "filter.w_sigma = " << cfg.filter.w_sigma << "\n";
    out << "filter.w_delta = " << cfg.filter.w_delta << "\n";
    out << "filter.mad_k = " << cfg.filter.mad_k << "\n";
    out << "filter.beta = " << cfg.filter.beta << "\n";
    out << "filter.enabled = " << (cfg.filter.filters_enabled ? "true" : "false") << "\n";
    return out.str();
}

// FNV-1a over the canonical serialization (output_dir excluded, so the hash
// identifies the experiment, not where it lands on disk).
inline std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize_config(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace fera
