#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fera/data.hpp"
#include "fera/linalg.hpp"
#include "fera/nn.hpp"

namespace fera {

enum class AttackKind { none, badnet, scaling, dba, adaptive_badnet };

struct AdaptiveParams {
    double clip_reduction = 0.75;
    double blend = 0.30;
    int ramp_rounds = 10;
};

struct AttackSpec {
    AttackKind kind = AttackKind::none;
    TriggerSpec trigger;
    double scale_factor = 10.0;        // scaling attack; >= 1
    std::size_t dba_index = 0;         // this colluder's shard
    std::size_t dba_total = 1;
    AdaptiveParams adaptive;
};

struct RoundContext {
    std::size_t round_index = 0;
    std::size_t attack_start_round = 0;  // first round the attack is active
    const FlatParams* global_params = nullptr;
};

// The coordinate shard a DBA colluder poisons: every dba_total-th trigger
// coordinate starting at dba_index. Shards partition the full trigger.
inline std::vector<std::size_t> dba_shard_coordinates(const TriggerSpec& trig,
                                                      std::size_t index,
                                                      std::size_t total) {
    if (index >= total) throw std::invalid_argument("dba shard index out of range");
    std::vector<std::size_t> coords;
    for (std::size_t i = index; i < trig.coordinates.size(); i += total)
        coords.push_back(trig.coordinates[i]);
    return coords;
}

// Poison a client's local split. BadNet variants stamp the full trigger; DBA
// stamps only this colluder's coordinate shard.
inline Dataset poison_local_data(const AttackSpec& spec, const Dataset& client_data,
                                 std::uint64_t seed) {
    switch (spec.kind) {
        case AttackKind::none:
            return client_data;
        case AttackKind::dba: {
            TriggerSpec shard = spec.trigger;
            shard.coordinates =
                dba_shard_coordinates(spec.trigger, spec.dba_index, spec.dba_total);
            return inject_trigger(client_data, shard, seed);
        }
        case AttackKind::badnet:
        case AttackKind::scaling:
        case AttackKind::adaptive_badnet:
            return inject_trigger(client_data, spec.trigger, seed);
    }
    return client_data;
}

// Transform the honestly-trained (poisoned-data) parameters into the
// submitted parameters.
//
// scaling:        submitted = global + scale * (honest - global)
// adaptive:       delta is blended toward a benign proxy update, its norm
//                 capped at (1 - clip_reduction) * ||honest delta||, and the
//                 whole thing ramped in over ramp_rounds.
// badnet / dba:   identity (the poisoning already happened in data space).
//
// benign_proxy may be null except for adaptive_badnet, where it is the same
// client's clean-data update from the same round.
inline FlatParams transform_update(const AttackSpec& spec, const FlatParams& honest,
                                   const RoundContext& ctx,
                                   const FlatParams* benign_proxy = nullptr) {
    const FlatParams& global = *ctx.global_params;
    if (honest.values.size() != global.values.size())
        throw std::invalid_argument("transform_update: parameter length mismatch");

    switch (spec.kind) {
        case AttackKind::none:
        case AttackKind::badnet:
        case AttackKind::dba:
            return honest;
        case AttackKind::scaling: {
            FlatParams out = honest;
            for (std::size_t i = 0; i < out.values.size(); ++i)
                out.values[i] = global.values[i] +
                                spec.scale_factor *
                                    (honest.values[i] - global.values[i]);
            return out;
        }
        case AttackKind::adaptive_badnet: {
            if (benign_proxy == nullptr ||
                benign_proxy->values.size() != global.values.size())
                throw std::invalid_argument(
                    "transform_update: adaptive attack needs a benign proxy");
            const std::size_t p = global.values.size();
            std::vector<double> delta(p);
            double honest_norm_sq = 0.0;
            for (std::size_t i = 0; i < p; ++i) {
                delta[i] = honest.values[i] - global.values[i];
                honest_norm_sq += delta[i] * delta[i];
            }
            const double honest_norm = std::sqrt(honest_norm_sq);
            // blend toward the benign trajectory, then cap the norm relative
            // to the honest delta (blend before clip keeps the cap binding)
            const double b = spec.adaptive.blend;
            for (std::size_t i = 0; i < p; ++i)
                delta[i] = (1.0 - b) * delta[i] +
                           b * (benign_proxy->values[i] - global.values[i]);
            const double cap = (1.0 - spec.adaptive.clip_reduction) * honest_norm;
            const double dnorm = l2_norm(delta);
            if (dnorm > cap && dnorm > 0.0) {
                const double s = cap / dnorm;
                for (auto& v : delta) v *= s;
            }
            double ramp = 1.0;
            if (spec.adaptive.ramp_rounds > 0) {
                const double since =
                    ctx.round_index >= ctx.attack_start_round
                        ? double(ctx.round_index - ctx.attack_start_round)
                        : 0.0;
                ramp = std::min(1.0, since / double(spec.adaptive.ramp_rounds));
            }
            FlatParams out = honest;
            for (std::size_t i = 0; i < p; ++i)
                out.values[i] = global.values[i] + ramp * delta[i];
            return out;
        }
    }
    return honest;
}

}  // namespace fera
