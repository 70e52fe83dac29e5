#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "specgnn/linalg.hpp"
#include "specgnn/rng.hpp"

namespace specgnn {

// Coefficients of every polynomial graph filter in the network:
// taps(layer, f, g)[k] is the weight of S^k on the path from input feature g
// to output feature f of that layer. Layer 0 has a single input feature; all
// later layers have `features` inputs.
struct FilterBank {
    std::size_t num_layers = 0;   // L
    std::size_t num_features = 0; // F
    std::size_t order = 0;        // K
    std::vector<std::vector<double>> coeffs;  // per layer, flat [f][g][k]

    static FilterBank zeros(std::size_t layers, std::size_t features, std::size_t order) {
        FilterBank b;
        b.num_layers = layers;
        b.num_features = features;
        b.order = order;
        b.coeffs.resize(layers);
        for (std::size_t l = 0; l < layers; ++l)
            b.coeffs[l].assign(features * b.in_features(l) * (order + 1), 0.0);
        return b;
    }

    std::size_t in_features(std::size_t layer) const { return layer == 0 ? 1 : num_features; }

    std::span<double> taps(std::size_t layer, std::size_t f, std::size_t g) {
        const std::size_t k1 = order + 1;
        return {coeffs[layer].data() + (f * in_features(layer) + g) * k1, k1};
    }

    std::span<const double> taps(std::size_t layer, std::size_t f, std::size_t g) const {
        const std::size_t k1 = order + 1;
        return {coeffs[layer].data() + (f * in_features(layer) + g) * k1, k1};
    }

    void validate() const {
        if (num_layers == 0 || num_features == 0)
            throw ConfigError("filter bank: need at least one layer and one feature");
        if (coeffs.size() != num_layers) throw DimensionError("filter bank: layer count mismatch");
        for (std::size_t l = 0; l < num_layers; ++l) {
            if (coeffs[l].size() != num_features * in_features(l) * (order + 1))
                throw DimensionError("filter bank: coefficient shape mismatch at layer " +
                                     std::to_string(l));
            if (!all_finite(coeffs[l].data(), coeffs[l].size()))
                throw NumericError("filter bank: non-finite coefficient at layer " +
                                   std::to_string(l));
        }
    }
};

// Filter bank plus the affine readout from the flattened final features
// (n*F values, feature-major) to the output vector.
struct ModelParams {
    FilterBank bank;
    DenseMatrix readout_weight;      // out_dim x (n*F)
    std::vector<double> readout_bias;

    std::size_t out_dim() const { return readout_weight.rows(); }
    std::size_t trunk_dim() const { return readout_weight.cols(); }
};

// Coefficients uniform on [-a, a] with a = 1/(F*(K+1)); readout uniform on
// [-1/sqrt(nF), 1/sqrt(nF)].
inline ModelParams init_params(std::size_t layers, std::size_t features, std::size_t order,
                               std::size_t n, std::size_t out_dim, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams p;
    p.bank = FilterBank::zeros(layers, features, order);
    const double a = 1.0 / (static_cast<double>(features) * static_cast<double>(order + 1));
    for (auto& layer : p.bank.coeffs)
        for (double& c : layer) c = rng.uniform(-a, a);
    const std::size_t trunk = n * features;
    const double b = 1.0 / std::sqrt(static_cast<double>(trunk));
    p.readout_weight = DenseMatrix(out_dim, trunk);
    for (double& w : p.readout_weight.values()) w = rng.uniform(-b, b);
    p.readout_bias.resize(out_dim);
    for (double& w : p.readout_bias) w = rng.uniform(-b, b);
    return p;
}

// Everything the backward pass needs from one forward evaluation. For layer
// l, powers[g][k] = S^k applied to that layer's g-th input feature; the k = 0
// entry is the input itself.
struct LayerTrace {
    std::vector<std::vector<std::vector<double>>> powers;  // [g][k] -> length-n vector
    std::vector<std::vector<double>> pre;                  // u^f before the nonlinearity
    std::vector<std::vector<double>> post;                 // ReLU(u^f)
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
    std::vector<double> features;  // flattened final features, feature-major
    std::vector<double> output;    // readout output (empty for trunk-only runs)
};

// sum_k h_k S^k x.
inline std::vector<double> filter_apply(std::span<const double> h, const DenseMatrix& s,
                                        std::span<const double> x) {
    if (h.empty()) throw DimensionError("filter_apply: empty coefficient vector");
    const auto trace = shift_power_trace(s, h.size() - 1, x);
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t k = 0; k < h.size(); ++k) axpy(h[k], trace[k], out);
    return out;
}

// h(lambda) = sum_k h_k lambda^k, evaluated by Horner's scheme.
inline double spectral_response(std::span<const double> h, double lambda) {
    double r = 0.0;
    for (std::size_t k = h.size(); k-- > 0;) r = r * lambda + h[k];
    return r;
}

inline double spectral_response_derivative(std::span<const double> h, double lambda) {
    double r = 0.0;
    for (std::size_t k = h.size(); k-- > 1;) r = r * lambda + static_cast<double>(k) * h[k];
    return r;
}

namespace detail {

inline std::vector<double> relu(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
    return out;
}

}  // namespace detail

// Runs the filter-bank layers (no readout) and records the full trace.
inline ForwardTrace trunk_forward(const FilterBank& bank, const DenseMatrix& s,
                                  std::span<const double> x) {
    if (!s.square() || s.rows() != x.size())
        throw DimensionError("trunk_forward: signal length does not match graph");
    const std::size_t n = x.size();
    const std::size_t k1 = bank.order + 1;

    ForwardTrace trace;
    trace.layers.resize(bank.num_layers);
    std::vector<std::vector<double>> current;
    current.emplace_back(x.begin(), x.end());

    for (std::size_t l = 0; l < bank.num_layers; ++l) {
        LayerTrace& lt = trace.layers[l];
        const std::size_t g_count = bank.in_features(l);
        lt.powers.resize(g_count);
        for (std::size_t g = 0; g < g_count; ++g)
            lt.powers[g] = shift_power_trace(s, bank.order, current[g]);

        lt.pre.resize(bank.num_features);
        lt.post.resize(bank.num_features);
        for (std::size_t f = 0; f < bank.num_features; ++f) {
            std::vector<double> u(n, 0.0);
            for (std::size_t g = 0; g < g_count; ++g) {
                const auto h = bank.taps(l, f, g);
                for (std::size_t k = 0; k < k1; ++k) axpy(h[k], lt.powers[g][k], u);
            }
            lt.post[f] = detail::relu(u);
            lt.pre[f] = std::move(u);
        }
        current = lt.post;
    }

    trace.features.reserve(n * bank.num_features);
    for (const auto& feat : current)
        trace.features.insert(trace.features.end(), feat.begin(), feat.end());
    return trace;
}

// Full model: trunk followed by the affine readout.
inline std::pair<std::vector<double>, ForwardTrace> gnn_forward(const ModelParams& params,
                                                                const DenseMatrix& s,
                                                                std::span<const double> x) {
    params.bank.validate();
    ForwardTrace trace = trunk_forward(params.bank, s, x);
    if (trace.features.size() != params.trunk_dim())
        throw DimensionError("gnn_forward: readout input dimension mismatch");
    trace.output = matvec(params.readout_weight, trace.features);
    for (std::size_t i = 0; i < trace.output.size(); ++i) trace.output[i] += params.readout_bias[i];
    return {trace.output, std::move(trace)};
}

// Per-layer spectral outputs z and the argmax bookkeeping the regularizer's
// subgradient needs. z[l][i] = max_f sum_g h_l^{fg}(lambda_i); ties go to the
// lowest index.
struct SpectralOutputs {
    std::vector<std::vector<double>> z;                   // [L][n]
    std::vector<std::vector<std::size_t>> best_feature;   // argmax_f per (l, i)
    std::vector<std::size_t> best_index;                  // argmax_i per l
    std::vector<double> max_z;                            // z[l][best_index[l]]
};

// Direct polynomial evaluation on the eigenvalues -- O(L F^2 n K); the
// eigenvector route below is the order-n^2-per-eigenvalue fidelity oracle.
inline SpectralOutputs spectral_outputs(const FilterBank& bank,
                                        std::span<const double> eigenvalues) {
    const std::size_t n = eigenvalues.size();
    SpectralOutputs out;
    out.z.resize(bank.num_layers);
    out.best_feature.resize(bank.num_layers);
    out.best_index.resize(bank.num_layers);
    out.max_z.resize(bank.num_layers);
    for (std::size_t l = 0; l < bank.num_layers; ++l) {
        out.z[l].resize(n);
        out.best_feature[l].resize(n);
        const std::size_t g_count = bank.in_features(l);
        for (std::size_t i = 0; i < n; ++i) {
            double best = 0.0;
            std::size_t best_f = 0;
            for (std::size_t f = 0; f < bank.num_features; ++f) {
                double sum = 0.0;
                for (std::size_t g = 0; g < g_count; ++g)
                    sum += spectral_response(bank.taps(l, f, g), eigenvalues[i]);
                if (f == 0 || sum > best) {
                    best = sum;
                    best_f = f;
                }
            }
            out.z[l][i] = best;
            out.best_feature[l][i] = best_f;
        }
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (out.z[l][i] > out.z[l][best_i]) best_i = i;
        out.best_index[l] = best_i;
        out.max_z[l] = out.z[l][best_i];
    }
    return out;
}

// The literal spectral path: filter each eigenvector through the bank, project
// back onto it, and take the feature-wise maximum. Mathematically identical to
// spectral_outputs; kept as its fidelity oracle.
inline std::vector<std::vector<double>> spectral_outputs_via_eigenvectors(
    const FilterBank& bank, const DenseMatrix& s, const DenseMatrix& v) {
    const std::size_t n = s.rows();
    if (v.rows() != n || v.cols() != n)
        throw DimensionError("spectral_outputs_via_eigenvectors: basis shape mismatch");
    // Orthonormality check: max |V^T V - I| <= 1e-8.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double d = 0.0;
            for (std::size_t r = 0; r < n; ++r) d += v(r, i) * v(r, j);
            if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-8)
                throw NumericError("spectral_outputs_via_eigenvectors: basis is not orthonormal");
        }
    }

    std::vector<std::vector<double>> z(bank.num_layers, std::vector<double>(n));
    std::vector<double> vi(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < n; ++r) vi[r] = v(r, i);
        const auto powers = shift_power_trace(s, bank.order, vi);
        for (std::size_t l = 0; l < bank.num_layers; ++l) {
            const std::size_t g_count = bank.in_features(l);
            double best = 0.0;
            for (std::size_t f = 0; f < bank.num_features; ++f) {
                std::vector<double> zf(n, 0.0);
                for (std::size_t g = 0; g < g_count; ++g) {
                    const auto h = bank.taps(l, f, g);
                    for (std::size_t k = 0; k < h.size(); ++k) axpy(h[k], powers[k], zf);
                }
                const double proj = dot(zf, vi);
                if (f == 0 || proj > best) best = proj;
            }
            z[l][i] = best;
        }
    }
    return z;
}

// Filter response envelope over [-1, 1]: bound = max |h|, lipschitz = max |h'|
// on a uniform grid.
struct ResponseConstants {
    double bound = 0.0;      // C_U estimate
    double lipschitz = 0.0;  // C_L estimate
    std::vector<double> grid;
};

inline ResponseConstants estimate_response_constants(std::span<const double> h,
                                                     std::size_t grid_size) {
    if (grid_size < 2) throw ConfigError("estimate_response_constants: grid needs >= 2 points");
    ResponseConstants rc;
    rc.grid.resize(grid_size);
    for (std::size_t i = 0; i < grid_size; ++i) {
        const double lambda = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(grid_size - 1);
        rc.grid[i] = lambda;
        rc.bound = std::max(rc.bound, std::abs(spectral_response(h, lambda)));
        rc.lipschitz = std::max(rc.lipschitz, std::abs(spectral_response_derivative(h, lambda)));
    }
    return rc;
}

// (1 + 8 sqrt(n)) * L * C_L * (C_U * F)^L -- the first-order scaling of the
// output deviation under a graph perturbation of a given operator norm.
inline double stability_constant(std::size_t n, std::size_t layers, std::size_t features,
                                 double c_lip, double c_bound) {
    return (1.0 + 8.0 * std::sqrt(static_cast<double>(n))) * static_cast<double>(layers) * c_lip *
           std::pow(c_bound * static_cast<double>(features), static_cast<double>(layers));
}

// Checkpoint layout: {L, F, K, n, coeffs[l][f][g][k], readout{rows, cols,
// weights (row-major), bias}}. nlohmann serializes doubles with shortest
// round-trip precision, so save/load is bit-faithful.
inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            std::size_t n) {
    params.bank.validate();
    nlohmann::json j;
    const FilterBank& b = params.bank;
    j["L"] = b.num_layers;
    j["F"] = b.num_features;
    j["K"] = b.order;
    j["n"] = n;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < b.num_layers; ++l) {
        nlohmann::json lf = nlohmann::json::array();
        for (std::size_t f = 0; f < b.num_features; ++f) {
            nlohmann::json fg = nlohmann::json::array();
            for (std::size_t g = 0; g < b.in_features(l); ++g) {
                const auto taps = b.taps(l, f, g);
                fg.push_back(std::vector<double>(taps.begin(), taps.end()));
            }
            lf.push_back(std::move(fg));
        }
        layers.push_back(std::move(lf));
    }
    j["coeffs"] = std::move(layers);
    j["readout"] = {{"rows", params.readout_weight.rows()},
                    {"cols", params.readout_weight.cols()},
                    {"weights", params.readout_weight.values()},
                    {"bias", params.readout_bias}};
    std::ofstream out(path);
    if (!out) throw DataError("save_checkpoint: cannot open " + path.string());
    out << j.dump(1) << '\n';
}

inline ModelParams load_checkpoint(const std::filesystem::path& path, std::size_t* n_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("load_checkpoint: parse failure: ") + e.what());
    }
    ModelParams p;
    p.bank = FilterBank::zeros(j.at("L").get<std::size_t>(), j.at("F").get<std::size_t>(),
                               j.at("K").get<std::size_t>());
    const auto& layers = j.at("coeffs");
    if (layers.size() != p.bank.num_layers) throw DataError("load_checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < p.bank.num_layers; ++l) {
        for (std::size_t f = 0; f < p.bank.num_features; ++f) {
            for (std::size_t g = 0; g < p.bank.in_features(l); ++g) {
                const auto taps = layers.at(l).at(f).at(g).get<std::vector<double>>();
                if (taps.size() != p.bank.order + 1)
                    throw DataError("load_checkpoint: tap count mismatch");
                std::copy(taps.begin(), taps.end(), p.bank.taps(l, f, g).begin());
            }
        }
    }
    const auto& r = j.at("readout");
    p.readout_weight = DenseMatrix(r.at("rows").get<std::size_t>(), r.at("cols").get<std::size_t>());
    p.readout_weight.values() = r.at("weights").get<std::vector<double>>();
    if (p.readout_weight.values().size() != p.readout_weight.rows() * p.readout_weight.cols())
        throw DataError("load_checkpoint: readout weight size mismatch");
    p.readout_bias = r.at("bias").get<std::vector<double>>();
    if (p.readout_bias.size() != p.readout_weight.rows())
        throw DataError("load_checkpoint: readout bias size mismatch");
    if (n_out) *n_out = j.at("n").get<std::size_t>();
    p.bank.validate();
    return p;
}

}  // namespace specgnn
