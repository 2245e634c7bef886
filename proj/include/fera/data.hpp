#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fera/linalg.hpp"
#include "fera/rng.hpp"

namespace fera {

struct Dataset {
    Matrix inputs;             // n x d, features in [0,1]
    std::vector<int> labels;   // n class indices
    int num_classes = 0;

    std::size_t size() const { return inputs.rows; }
};

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    double alpha = 0.0;  // Dirichlet concentration; <= 0 means IID
};

enum class TriggerKind { pixel_patch, pattern };

struct TriggerSpec {
    TriggerKind kind = TriggerKind::pixel_patch;
    std::vector<std::size_t> coordinates;
    double value = 1.0;
    int target_label = 0;
    double poison_fraction = 0.2;
};

// Gaussian class blobs with well-separated means, clipped to [0,1].
// Desk-scale stand-in for an image benchmark.
inline Dataset synth_dataset(std::uint64_t seed, int num_classes,
                             std::size_t per_class, std::size_t d,
                             std::uint64_t noise_seed) {
    if (num_classes < 2) throw std::invalid_argument("synth_dataset: num_classes >= 2");
    if (d < 4) throw std::invalid_argument("synth_dataset: d >= 4");
    // Class means come from `seed` alone so that train and test splits drawn
    // with different noise seeds describe the same classification task.
    auto mean_rng = make_stream(seed, StreamPurpose::data_synth);
    auto rng = make_stream(noise_seed, StreamPurpose::data_synth, 1);
    // Each class mean is a random pattern over {0.3, 0.7}; distinct patterns
    // keep inter-class distance around sqrt(d/2) * 0.4.
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(d));
    std::bernoulli_distribution coin(0.5);
    for (auto& mu : means)
        for (auto& v : mu) v = coin(mean_rng) ? 0.7 : 0.3;
    std::normal_distribution<double> noise(0.0, 0.08);

    const std::size_t n = per_class * static_cast<std::size_t>(num_classes);
    Dataset ds;
    ds.num_classes = num_classes;
    ds.inputs = Matrix(n, d);
    ds.labels.resize(n);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (std::size_t k = 0; k < per_class; ++k, ++row) {
            for (std::size_t j = 0; j < d; ++j)
                ds.inputs.at(row, j) =
                    std::clamp(means[c][j] + noise(rng), 0.0, 1.0);
            ds.labels[row] = c;
        }
    }
    return ds;
}

inline Dataset synth_dataset(std::uint64_t seed, int num_classes,
                             std::size_t per_class, std::size_t d) {
    return synth_dataset(seed, num_classes, per_class, d, seed);
}

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path,
                               std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("IDX parse error in " + path +
                                 ": truncated at byte offset " +
                                 std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Classic MNIST IDX pair: images file (magic 0x803) + labels file (magic
// 0x801). Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
    std::uint32_t magic = detail::read_be32(img, images_path, 0);
    if (magic != 0x00000803)
        throw std::runtime_error("IDX parse error in " + images_path +
                                 ": bad image magic at byte offset 0");
    std::uint32_t n = detail::read_be32(img, images_path, 4);
    std::uint32_t h = detail::read_be32(img, images_path, 8);
    std::uint32_t w = detail::read_be32(img, images_path, 12);

    Dataset ds;
    ds.inputs = Matrix(n, std::size_t(h) * w);
    std::vector<unsigned char> rowbuf(std::size_t(h) * w);
    for (std::uint32_t r = 0; r < n; ++r) {
        if (!img.read(reinterpret_cast<char*>(rowbuf.data()),
                      static_cast<std::streamsize>(rowbuf.size())))
            throw std::runtime_error(
                "IDX parse error in " + images_path + ": truncated at byte offset " +
                std::to_string(16 + std::size_t(r) * rowbuf.size()));
        for (std::size_t j = 0; j < rowbuf.size(); ++j)
            ds.inputs.at(r, j) = rowbuf[j] / 255.0;
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);
    magic = detail::read_be32(lab, labels_path, 0);
    if (magic != 0x00000801)
        throw std::runtime_error("IDX parse error in " + labels_path +
                                 ": bad label magic at byte offset 0");
    std::uint32_t nl = detail::read_be32(lab, labels_path, 4);
    if (nl != n)
        throw std::runtime_error("load_idx: image/label count mismatch (" +
                                 std::to_string(n) + " vs " + std::to_string(nl) + ")");
    ds.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t r = 0; r < n; ++r) {
        char b;
        if (!lab.get(b))
            throw std::runtime_error("IDX parse error in " + labels_path +
                                     ": truncated at byte offset " +
                                     std::to_string(8 + r));
        ds.labels[r] = static_cast<unsigned char>(b);
        max_label = std::max(max_label, ds.labels[r]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// Per-class Dirichlet split over clients (Hsu et al. convention): for each
// class, draw proportions ~ Dir(alpha) across clients and hand out that
// class's samples by largest-remainder rounding. alpha <= 0 selects an IID
// round-robin split.
inline PartitionPlan dirichlet_partition(const Dataset& ds,
                                         std::size_t num_clients, double alpha,
                                         std::uint64_t seed) {
    if (num_clients < 2)
        throw std::invalid_argument("dirichlet_partition: num_clients >= 2");
    if (num_clients > ds.size())
        throw std::invalid_argument("dirichlet_partition: more clients than samples");

    auto rng = make_stream(seed, StreamPurpose::partition);
    PartitionPlan plan;
    plan.alpha = alpha;
    plan.client_indices.assign(num_clients, {});

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[ds.labels[i]].push_back(i);

    for (auto& idxs : by_class) {
        if (idxs.empty()) continue;
        std::shuffle(idxs.begin(), idxs.end(), rng);
        std::vector<double> props(num_clients);
        if (alpha > 0.0) {
            std::gamma_distribution<double> gamma(alpha, 1.0);
            double sum = 0.0;
            for (auto& p : props) {
                p = std::max(gamma(rng), 1e-300);
                sum += p;
            }
            for (auto& p : props) p /= sum;
        } else {
            std::fill(props.begin(), props.end(), 1.0 / double(num_clients));
        }
        // largest-remainder apportionment of this class's samples
        const std::size_t total = idxs.size();
        std::vector<std::size_t> counts(num_clients);
        std::vector<std::pair<double, std::size_t>> rema(num_clients);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < num_clients; ++c) {
            double exact = props[c] * double(total);
            counts[c] = static_cast<std::size_t>(exact);
            assigned += counts[c];
            rema[c] = {exact - double(counts[c]), c};
        }
        std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t k = 0; assigned < total; ++k, ++assigned)
            ++counts[rema[k % num_clients].second];

        std::size_t pos = 0;
        for (std::size_t c = 0; c < num_clients; ++c)
            for (std::size_t k = 0; k < counts[c]; ++k)
                plan.client_indices[c].push_back(idxs[pos++]);
    }

    // Repair empty clients by stealing one sample from the largest client.
    for (std::size_t c = 0; c < num_clients; ++c) {
        if (!plan.client_indices[c].empty()) continue;
        std::size_t big = 0;
        for (std::size_t j = 1; j < num_clients; ++j)
            if (plan.client_indices[j].size() > plan.client_indices[big].size())
                big = j;
        if (plan.client_indices[big].size() <= 1)
            throw std::runtime_error("dirichlet_partition: cannot repair empty client");
        plan.client_indices[c].push_back(plan.client_indices[big].back());
        plan.client_indices[big].pop_back();
    }
    return plan;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idxs) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.inputs = Matrix(idxs.size(), ds.inputs.cols);
    out.labels.resize(idxs.size());
    for (std::size_t i = 0; i < idxs.size(); ++i) {
        std::copy_n(&ds.inputs.data[idxs[i] * ds.inputs.cols], ds.inputs.cols,
                    &out.inputs.data[i * out.inputs.cols]);
        out.labels[i] = ds.labels[idxs[i]];
    }
    return out;
}

// Poison a seeded random floor(fraction * n) subset: trigger coordinates set
// to the trigger value, label replaced by the target. Input left untouched.
inline Dataset inject_trigger(const Dataset& ds, const TriggerSpec& spec,
                              std::uint64_t seed) {
    for (auto c : spec.coordinates)
        if (c >= ds.inputs.cols)
            throw std::invalid_argument("inject_trigger: coordinate out of range");
    Dataset out = ds;
    const std::size_t n_poison =
        static_cast<std::size_t>(spec.poison_fraction * double(ds.size()));
    std::vector<std::size_t> idxs(ds.size());
    std::iota(idxs.begin(), idxs.end(), 0);
    auto rng = make_stream(seed, StreamPurpose::trigger);
    std::shuffle(idxs.begin(), idxs.end(), rng);
    for (std::size_t k = 0; k < n_poison; ++k) {
        const std::size_t r = idxs[k];
        for (auto c : spec.coordinates) out.inputs.at(r, c) = spec.value;
        out.labels[r] = spec.target_label;
    }
    return out;
}

// Stamp the trigger on every row without touching labels (used for the
// backdoor evaluation set).
inline Dataset apply_trigger_all(const Dataset& ds, const TriggerSpec& spec) {
    Dataset out = ds;
    for (std::size_t r = 0; r < out.size(); ++r)
        for (auto c : spec.coordinates) out.inputs.at(r, c) = spec.value;
    return out;
}

// Backdoor evaluation set: all test samples whose true label differs from the
// target, trigger applied, labels set to the target. Accuracy on this set is
// the attack success rate.
inline Dataset make_backdoor_testset(const Dataset& test, const TriggerSpec& spec) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test.labels[i] != spec.target_label) keep.push_back(i);
    Dataset out = apply_trigger_all(subset(test, keep), spec);
    std::fill(out.labels.begin(), out.labels.end(), spec.target_label);
    return out;
}

// Seeded uniform sample without replacement from the test set.
inline Dataset make_root(const Dataset& ds_test, std::size_t size,
                         std::uint64_t seed) {
    if (size > ds_test.size())
        throw std::invalid_argument("make_root: size exceeds test set");
    std::vector<std::size_t> idxs(ds_test.size());
    std::iota(idxs.begin(), idxs.end(), 0);
    auto rng = make_stream(seed, StreamPurpose::root_sample);
    std::shuffle(idxs.begin(), idxs.end(), rng);
    idxs.resize(size);
    return subset(ds_test, idxs);
}

}  // namespace fera
