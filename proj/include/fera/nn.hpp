#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fera/linalg.hpp"
#include "fera/rng.hpp"

namespace fera {

// A model's parameters as one flat vector plus the layer shape needed to
// reinterpret it. Layout per layer: weights (d_in x d_out, row-major), then
// biases (d_out).
struct FlatParams {
    std::vector<double> values;
    std::vector<std::size_t> layer_dims;  // input, hidden..., output

    static std::size_t param_count(const std::vector<std::size_t>& dims) {
        std::size_t p = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            p += dims[l] * dims[l + 1] + dims[l + 1];
        return p;
    }
};

struct Batch {
    Matrix inputs;               // n x d_in
    std::vector<int> labels;     // n class indices
};

// Feed-forward MLP: ReLU hidden layers, linear logits. The last hidden layer
// is the representation layer probed by the defense; rep_layer can select an
// earlier hidden layer instead.
struct MlpModel {
    std::vector<std::size_t> layer_dims;
    FlatParams params;
    // Index into the activation stack that feeds the representation matrix:
    // 0 = input, l = output of layer l. Default = last hidden layer.
    std::size_t rep_layer = 0;

    std::size_t num_layers() const { return layer_dims.size() - 1; }
    std::size_t num_classes() const { return layer_dims.back(); }
    std::size_t rep_dim() const { return layer_dims[rep_layer]; }

    // Offset of layer l's weight block in the flat vector.
    std::size_t weight_offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < l; ++i)
            off += layer_dims[i] * layer_dims[i + 1] + layer_dims[i + 1];
        return off;
    }
    std::size_t bias_offset(std::size_t l) const {
        return weight_offset(l) + layer_dims[l] * layer_dims[l + 1];
    }
};

inline MlpModel make_mlp(std::vector<std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need >= 2 dims");
    MlpModel m;
    m.layer_dims = dims;
    m.rep_layer = dims.size() - 2;  // last hidden (input itself for a 1-layer net)
    m.params.layer_dims = dims;
    m.params.values.resize(FlatParams::param_count(dims), 0.0);
    auto rng = make_stream(seed, StreamPurpose::model_init);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        double s = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        std::uniform_real_distribution<double> dist(-s, s);
        std::size_t woff = m.weight_offset(l);
        for (std::size_t i = 0; i < dims[l] * dims[l + 1]; ++i)
            m.params.values[woff + i] = dist(rng);
        // biases stay zero
    }
    return m;
}

struct ForwardResult {
    Matrix logits;       // n x num_classes
    Matrix penultimate;  // n x rep_dim  (activations of the selected hidden layer)
};

namespace detail {

// Activations for every layer; layer 0 is the input itself.
inline std::vector<Matrix> forward_all(const MlpModel& m, const Matrix& inputs) {
    if (inputs.cols != m.layer_dims[0])
        throw std::invalid_argument("forward: input width mismatch");
    std::vector<Matrix> acts;
    acts.reserve(m.num_layers() + 1);
    acts.push_back(inputs);
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        const std::size_t din = m.layer_dims[l], dout = m.layer_dims[l + 1];
        const double* w = &m.params.values[m.weight_offset(l)];
        const double* b = &m.params.values[m.bias_offset(l)];
        const Matrix& prev = acts.back();
        Matrix next(inputs.rows, dout);
        const bool hidden = l + 1 < m.num_layers();
        for (std::size_t r = 0; r < prev.rows; ++r) {
            for (std::size_t j = 0; j < dout; ++j) {
                double acc = b[j];
                for (std::size_t i = 0; i < din; ++i)
                    acc += prev.at(r, i) * w[i * dout + j];
                if (hidden && acc < 0.0) acc = 0.0;  // ReLU on hidden layers
                next.at(r, j) = acc;
            }
        }
        acts.push_back(std::move(next));
    }
    return acts;
}

}  // namespace detail

inline ForwardResult forward(const MlpModel& m, const Matrix& inputs) {
    auto acts = detail::forward_all(m, inputs);
    ForwardResult res;
    res.penultimate = acts[m.rep_layer];
    res.logits = std::move(acts.back());
    return res;
}

namespace detail {

// Softmax cross-entropy loss over a batch, averaged; writes dL/dlogits.
inline double softmax_xent(const Matrix& logits, std::span<const int> labels,
                           Matrix& dlogits) {
    const std::size_t n = logits.rows, k = logits.cols;
    dlogits = Matrix(n, k);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(r, j) - mx);
        double logz = std::log(z) + mx;
        loss += logz - logits.at(r, static_cast<std::size_t>(labels[r]));
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::exp(logits.at(r, j) - logz);
            dlogits.at(r, j) =
                (p - (j == static_cast<std::size_t>(labels[r]) ? 1.0 : 0.0)) /
                static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace detail

// Mean cross-entropy loss and its gradient w.r.t. all parameters.
inline double loss_and_grad(const MlpModel& m, const Matrix& inputs,
                            std::span<const int> labels,
                            std::vector<double>& grad) {
    auto acts = detail::forward_all(m, inputs);
    grad.assign(m.params.values.size(), 0.0);
    Matrix delta;  // dL/d(pre-activation) of current layer
    double loss = detail::softmax_xent(acts.back(), labels, delta);

    for (std::size_t l = m.num_layers(); l-- > 0;) {
        const std::size_t din = m.layer_dims[l], dout = m.layer_dims[l + 1];
        const Matrix& prev = acts[l];
        double* gw = &grad[m.weight_offset(l)];
        double* gb = &grad[m.bias_offset(l)];
        for (std::size_t r = 0; r < prev.rows; ++r)
            for (std::size_t j = 0; j < dout; ++j) {
                const double d = delta.at(r, j);
                if (d == 0.0) continue;
                gb[j] += d;
                for (std::size_t i = 0; i < din; ++i)
                    gw[i * dout + j] += prev.at(r, i) * d;
            }
        if (l == 0) break;
        const double* w = &m.params.values[m.weight_offset(l)];
        Matrix prev_delta(prev.rows, din);
        for (std::size_t r = 0; r < prev.rows; ++r)
            for (std::size_t i = 0; i < din; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dout; ++j)
                    acc += delta.at(r, j) * w[i * dout + j];
                // ReLU gate of the hidden layer below
                prev_delta.at(r, i) = prev.at(r, i) > 0.0 ? acc : 0.0;
            }
        delta = std::move(prev_delta);
    }
    return loss;
}

// One epoch of mini-batch SGD in a deterministic shuffled order.
inline void sgd_epoch(MlpModel& m, const Batch& data, double lr,
                      std::size_t batch_size, std::uint64_t shuffle_seed) {
    const std::size_t n = data.inputs.rows;
    if (n == 0) throw std::invalid_argument("sgd_epoch: empty batch");
    if (batch_size == 0) batch_size = n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_stream(shuffle_seed, StreamPurpose::shuffle);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> grad;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bs = std::min(batch_size, n - start);
        Matrix bx(bs, data.inputs.cols);
        std::vector<int> by(bs);
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t src = order[start + i];
            std::copy_n(&data.inputs.data[src * data.inputs.cols],
                        data.inputs.cols, &bx.data[i * bx.cols]);
            by[i] = data.labels[src];
        }
        loss_and_grad(m, bx, by, grad);
        for (std::size_t i = 0; i < grad.size(); ++i)
            m.params.values[i] -= lr * grad[i];
    }
}

// Fraction of argmax(logits) == label; argmax ties go to the lowest index.
inline double evaluate(const MlpModel& m, const Batch& data) {
    if (data.inputs.rows == 0) return 0.0;
    auto res = forward(m, data.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < res.logits.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < res.logits.cols; ++j)
            if (res.logits.at(r, j) > res.logits.at(r, best)) best = j;
        if (best == static_cast<std::size_t>(data.labels[r])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(res.logits.rows);
}

// Checkpoint format: u64 count then count little-endian f64 values.
inline void save_params(const FlatParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    std::uint64_t n = p.values.size();
    unsigned char hdr[8];
    for (int i = 0; i < 8; ++i) hdr[i] = static_cast<unsigned char>(n >> (8 * i));
    out.write(reinterpret_cast<const char*>(hdr), 8);
    for (double v : p.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
}

inline std::vector<double> load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    unsigned char hdr[8];
    if (!in.read(reinterpret_cast<char*>(hdr), 8))
        throw std::runtime_error("load_params: truncated header in " + path);
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(hdr[i]) << (8 * i);
    std::vector<double> vals(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8))
            throw std::runtime_error("load_params: truncated payload in " + path);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&vals[k], &bits, 8);
    }
    return vals;
}

}  // namespace fera
