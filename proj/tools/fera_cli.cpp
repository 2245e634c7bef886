// Command-line front end: run a single experiment, sweep a config axis, or
// check the fast metric path against the slow reference implementation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fera/config.hpp"
#include "fera/harness.hpp"
#include "fera/testing/slow_metrics.hpp"

namespace {

void print_summary(const fera::ExperimentSummary& s) {
    std::printf("final_ma=%.4f final_ba=%.4f precision=%.3f tpr=%.3f fpr=%.3f hash=%s\n",
                s.final_ma, s.final_ba, s.mean_precision, s.mean_tpr, s.mean_fpr,
                s.config_hash.c_str());
}

struct Axis {
    std::string key;
    std::vector<std::string> values;
};

Axis parse_axis(const std::string& arg) {
    auto eq = arg.find('=');
    if (eq == std::string::npos)
        throw CLI::ValidationError("--axis expects name=v1,v2,...");
    Axis axis;
    axis.key = arg.substr(0, eq);
    std::stringstream ss(arg.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ','))
        axis.values.push_back(tok);
    if (axis.values.empty())
        throw CLI::ValidationError("--axis needs at least one value");
    return axis;
}

void run_sweep_cell(const fera::ExperimentConfig& base,
                    const std::vector<Axis>& axes,
                    std::vector<std::size_t>& pick, std::size_t depth) {
    if (depth == axes.size()) {
        fera::ExperimentConfig cfg = base;
        std::string cell;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            fera::apply_config_entry(cfg, axes[a].key, axes[a].values[pick[a]]);
            if (!cell.empty()) cell += "_";
            std::string v = axes[a].values[pick[a]];
            for (auto& ch : v)
                if (ch == '/' || ch == ',') ch = '-';
            cell += axes[a].key + "=" + v;
        }
        cfg.output_dir = (std::filesystem::path(base.output_dir) / cell).string();
        fera::validate_config(cfg);
        std::printf("[%s] ", cell.c_str());
        auto res = fera::run_experiment(cfg);
        print_summary(res.summary);
        return;
    }
    for (std::size_t i = 0; i < axes[depth].values.size(); ++i) {
        pick[depth] = i;
        run_sweep_cell(base, axes, pick, depth + 1);
    }
}

int oracle_check() {
    fera::ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.num_clients = 12;
    cfg.clients_per_round = 6;
    cfg.rounds = 20;
    cfg.warmup_rounds = 5;
    cfg.attack_start_round = 6;
    cfg.attack.kind = fera::AttackKind::badnet;
    cfg.attack.trigger.coordinates = {0, 1, 2};
    cfg.per_class_train = 60;
    cfg.per_class_test = 40;
    cfg.aggregator = fera::AggregatorKind::fera;

    double worst = 0.0;
    std::size_t rounds_checked = 0;
    auto callback = [&](const fera::RoundHook& hook) {
        if (!hook.metrics) return;
        auto slow = fera::testing::slow_compute_metrics(
            hook.updates, hook.global, hook.arch, hook.root, cfg.filter);
        worst = std::max(worst, fera::testing::max_rel_diff(*hook.metrics, slow));
        ++rounds_checked;
    };
    fera::run_experiment(cfg, false, callback);

    const bool ok = worst <= 1e-6;
    std::printf("oracle-check: %zu rounds, max relative difference %.3e -> %s\n",
                rounds_checked, worst, ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FeRA federated backdoor-defense simulator"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run_cmd = app.add_subcommand("run", "run a single experiment");
    run_cmd->add_option("--config", config_path, "config file")->required();

    std::string sweep_config;
    std::vector<std::string> axis_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "run a grid over config axes");
    sweep_cmd->add_option("--config", sweep_config, "base config file")->required();
    sweep_cmd->add_option("--axis", axis_args, "axis as name=v1,v2,...")->required();

    auto* oracle_cmd = app.add_subcommand(
        "oracle-check", "compare fast metrics against the slow reference path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            auto cfg = fera::load_config(config_path);
            auto res = fera::run_experiment(cfg);
            print_summary(res.summary);
            std::printf("outputs written to %s\n", cfg.output_dir.c_str());
        } else if (sweep_cmd->parsed()) {
            auto base = fera::load_config(sweep_config);
            std::vector<Axis> axes;
            for (const auto& a : axis_args) axes.push_back(parse_axis(a));
            std::vector<std::size_t> pick(axes.size(), 0);
            run_sweep_cell(base, axes, pick, 0);
        } else if (oracle_cmd->parsed()) {
            return oracle_check();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
