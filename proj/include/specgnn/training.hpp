#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "specgnn/data.hpp"
#include "specgnn/model.hpp"

namespace specgnn {

enum class RegularizerMode {
    None,       // plain task cost
    MaxToZero,  // penalize the maximal spectral output directly ("plain-spectral")
    MaxToOne,   // pull the maximal spectral output toward one ("sr")
};

inline const char* to_string(RegularizerMode m) {
    switch (m) {
        case RegularizerMode::None: return "none";
        case RegularizerMode::MaxToZero: return "plain-spectral";
        case RegularizerMode::MaxToOne: return "sr";
    }
    return "?";
}

inline RegularizerMode regularizer_mode_from_string(const std::string& s) {
    if (s == "none") return RegularizerMode::None;
    if (s == "plain-spectral") return RegularizerMode::MaxToZero;
    if (s == "sr") return RegularizerMode::MaxToOne;
    throw ConfigError("unknown regularizer mode: " + s);
}

struct LossSpec {
    TaskKind task = TaskKind::Classification;
    double gamma = 0.0;
    RegularizerMode mode = RegularizerMode::None;

    void validate() const {
        if (gamma < 0.0) throw ConfigError("loss: gamma must be >= 0");
    }
};

// Partials with the same shape as ModelParams.
struct GradientSet {
    std::vector<std::vector<double>> bank;  // same layout as FilterBank::coeffs
    DenseMatrix readout_weight;
    std::vector<double> readout_bias;

    static GradientSet zeros_like(const ModelParams& p) {
        GradientSet g;
        g.bank.resize(p.bank.coeffs.size());
        for (std::size_t l = 0; l < p.bank.coeffs.size(); ++l)
            g.bank[l].assign(p.bank.coeffs[l].size(), 0.0);
        g.readout_weight = DenseMatrix(p.readout_weight.rows(), p.readout_weight.cols());
        g.readout_bias.assign(p.readout_bias.size(), 0.0);
        return g;
    }

    double norm2() const {
        double s = 0.0;
        for (const auto& l : bank)
            for (double v : l) s += v * v;
        for (double v : readout_weight.values()) s += v * v;
        for (double v : readout_bias) s += v * v;
        return std::sqrt(s);
    }

    // Returns the location of the first non-finite entry, if any.
    std::optional<std::string> first_non_finite() const {
        for (std::size_t l = 0; l < bank.size(); ++l)
            for (std::size_t i = 0; i < bank[l].size(); ++i)
                if (!std::isfinite(bank[l][i]))
                    return "bank layer " + std::to_string(l) + " index " + std::to_string(i);
        for (std::size_t i = 0; i < readout_weight.values().size(); ++i)
            if (!std::isfinite(readout_weight.values()[i]))
                return "readout weight index " + std::to_string(i);
        for (std::size_t i = 0; i < readout_bias.size(); ++i)
            if (!std::isfinite(readout_bias[i])) return "readout bias index " + std::to_string(i);
        return std::nullopt;
    }
};

namespace detail {

inline std::size_t param_count(const ModelParams& p) {
    std::size_t c = 0;
    for (const auto& layer : p.bank.coeffs) c += layer.size();
    return c + p.readout_weight.values().size() + p.readout_bias.size();
}

inline double* param_at(ModelParams& p, std::size_t idx) {
    for (auto& layer : p.bank.coeffs) {
        if (idx < layer.size()) return &layer[idx];
        idx -= layer.size();
    }
    if (idx < p.readout_weight.values().size()) return &p.readout_weight.values()[idx];
    idx -= p.readout_weight.values().size();
    return &p.readout_bias[idx];
}

inline double grad_at(const GradientSet& g, std::size_t idx) {
    for (const auto& layer : g.bank) {
        if (idx < layer.size()) return layer[idx];
        idx -= layer.size();
    }
    if (idx < g.readout_weight.values().size()) return g.readout_weight.values()[idx];
    idx -= g.readout_weight.values().size();
    return g.readout_bias[idx];
}

// Numerically stable softmax cross-entropy; d_logits = softmax - onehot.
inline double softmax_cross_entropy(std::span<const double> logits, int label,
                                    std::vector<double>* d_logits) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw ConfigError("cost: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    if (d_logits) {
        d_logits->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            (*d_logits)[i] = std::exp(logits[i] - lse) - (static_cast<int>(i) == label ? 1.0 : 0.0);
    }
    return lse - logits[label];
}

inline double sample_cost(const Sample& s, std::span<const double> output, TaskKind task,
                          std::vector<double>* d_output) {
    if (task == TaskKind::Classification) return softmax_cross_entropy(output, s.label(), d_output);
    if (s.target_index < 0 || static_cast<std::size_t>(s.target_index) >= output.size())
        throw ConfigError("cost: regression target index out of range");
    const double err = output[s.target_index] - s.y;
    if (d_output) {
        d_output->assign(output.size(), 0.0);
        (*d_output)[s.target_index] = 2.0 * err;
    }
    return err * err;
}

// Regularizer value per layer. MaxToOne: |1 - max_i z_li|; MaxToZero: max_i z_li.
inline double regularizer_value(const SpectralOutputs& spectral, RegularizerMode mode) {
    if (mode == RegularizerMode::None) return 0.0;
    double sum = 0.0;
    for (double m : spectral.max_z)
        sum += mode == RegularizerMode::MaxToOne ? std::abs(1.0 - m) : m;
    return sum / static_cast<double>(spectral.max_z.size());
}

}  // namespace detail

struct ObjectiveParts {
    double total = 0.0;        // fit + gamma * regularizer
    double fit = 0.0;          // mean task cost over the batch
    double regularizer = 0.0;  // mean per-layer penalty, unweighted by gamma
};

// Forward state for a whole batch: one trace per sample plus the shared
// (sample-independent) spectral outputs of the current parameters.
struct BatchTrace {
    std::vector<ForwardTrace> samples;
    SpectralOutputs spectral;
};

inline std::pair<ObjectiveParts, BatchTrace> forward_batch(const ModelParams& params,
                                                           const DenseMatrix& s,
                                                           std::span<const double> eigenvalues,
                                                           std::span<const Sample> batch,
                                                           const LossSpec& spec) {
    spec.validate();
    if (batch.empty()) throw ConfigError("objective: empty batch");
    BatchTrace trace;
    trace.samples.reserve(batch.size());
    ObjectiveParts parts;
    for (const Sample& sample : batch) {
        auto [output, ft] = gnn_forward(params, s, sample.x);
        parts.fit += detail::sample_cost(sample, output, spec.task, nullptr);
        trace.samples.push_back(std::move(ft));
    }
    parts.fit /= static_cast<double>(batch.size());
    trace.spectral = spectral_outputs(params.bank, eigenvalues);
    parts.regularizer = detail::regularizer_value(trace.spectral, spec.mode);
    parts.total = parts.fit + spec.gamma * parts.regularizer;
    return {parts, std::move(trace)};
}

// Value of the regularized objective: mean task cost plus gamma times the
// mean per-layer spectral penalty.
inline ObjectiveParts objective(const ModelParams& params, const DenseMatrix& s,
                                std::span<const double> eigenvalues,
                                std::span<const Sample> batch, const LossSpec& spec) {
    return forward_batch(params, s, eigenvalues, batch, spec).first;
}

// Adds the regularizer's subgradient to `grads`. The subgradient routes only
// to the recorded argmax (i*, f*) of each layer: for every input feature g and
// tap k, d/dh[l][f*][g][k] += (gamma/L) * sigma * lambda_{i*}^k, with
// sigma = -sign(1 - max z) for the pull-to-one mode (0 exactly at the kink)
// and sigma = +1 for the push-to-zero mode.
inline void add_regularizer_gradient(const FilterBank& bank, const SpectralOutputs& spectral,
                                     std::span<const double> eigenvalues, double gamma,
                                     RegularizerMode mode, GradientSet& grads) {
    if (mode == RegularizerMode::None || gamma == 0.0) return;
    const double layer_weight = gamma / static_cast<double>(bank.num_layers);
    for (std::size_t l = 0; l < bank.num_layers; ++l) {
        const double m = spectral.max_z[l];
        double sigma;
        if (mode == RegularizerMode::MaxToOne) {
            if (m == 1.0) continue;
            sigma = m > 1.0 ? 1.0 : -1.0;  // -sign(1 - m)
        } else {
            sigma = 1.0;
        }
        const std::size_t i_star = spectral.best_index[l];
        const std::size_t f_star = spectral.best_feature[l][i_star];
        const double lambda = eigenvalues[i_star];
        const std::size_t g_count = bank.in_features(l);
        const std::size_t k1 = bank.order + 1;
        for (std::size_t g = 0; g < g_count; ++g) {
            double* gh = grads.bank[l].data() + (f_star * g_count + g) * k1;
            double pow_l = 1.0;
            for (std::size_t k = 0; k < k1; ++k) {
                gh[k] += layer_weight * sigma * pow_l;
                pow_l *= lambda;
            }
        }
    }
}

// Exact reverse-mode gradients of the batch objective. ReLU uses subgradient
// 0 at 0; the absolute value and maxima follow the conventions above.
inline GradientSet backward(const BatchTrace& trace, const ModelParams& params,
                            const DenseMatrix& s, std::span<const double> eigenvalues,
                            std::span<const Sample> batch, const LossSpec& spec) {
    spec.validate();
    if (trace.samples.size() != batch.size())
        throw DimensionError("backward: trace does not match batch");
    const FilterBank& bank = params.bank;
    const std::size_t n = s.rows();
    const std::size_t k1 = bank.order + 1;
    GradientSet grads = GradientSet::zeros_like(params);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    std::vector<double> d_output;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const ForwardTrace& ft = trace.samples[b];
        detail::sample_cost(batch[b], ft.output, spec.task, &d_output);

        // Readout: dW = d_out (x) features, db = d_out, d_features = W^T d_out.
        // d_features stays unscaled; the trunk applies 1/batch at its dot
        // products, so every parameter sees the batch mean exactly once.
        std::vector<double> d_features(ft.features.size(), 0.0);
        for (std::size_t c = 0; c < d_output.size(); ++c) {
            if (d_output[c] == 0.0) continue;
            const double d = d_output[c] * inv_batch;
            grads.readout_bias[c] += d;
            double* wrow = grads.readout_weight.row(c).data();
            const double* prow = params.readout_weight.row(c).data();
            for (std::size_t j = 0; j < ft.features.size(); ++j) {
                wrow[j] += d * ft.features[j];
                d_features[j] += prow[j] * d_output[c];
            }
        }

        // Unflatten into per-feature signals of the last layer.
        std::vector<std::vector<double>> d_post(bank.num_features, std::vector<double>(n));
        for (std::size_t f = 0; f < bank.num_features; ++f)
            for (std::size_t i = 0; i < n; ++i) d_post[f][i] = d_features[f * n + i];

        for (std::size_t l = bank.num_layers; l-- > 0;) {
            const LayerTrace& lt = ft.layers[l];
            const std::size_t g_count = bank.in_features(l);

            // Through ReLU: subgradient 0 at 0.
            std::vector<std::vector<double>> delta(bank.num_features);
            for (std::size_t f = 0; f < bank.num_features; ++f) {
                delta[f].resize(n);
                for (std::size_t i = 0; i < n; ++i)
                    delta[f][i] = lt.pre[f][i] > 0.0 ? d_post[f][i] : 0.0;
            }

            // Coefficient partials: d/dh[l][f][g][k] = delta_f . (S^k x_{l-1}^g).
            for (std::size_t f = 0; f < bank.num_features; ++f) {
                for (std::size_t g = 0; g < g_count; ++g) {
                    double* gh = grads.bank[l].data() + (f * g_count + g) * k1;
                    for (std::size_t k = 0; k < k1; ++k)
                        gh[k] += inv_batch * dot(delta[f], lt.powers[g][k]);
                }
            }

            if (l == 0) break;
            // Input partials: d x_{l-1}^g = sum_f sum_k h_k S^k delta_f
            // (S is symmetric, so H(S)^T = H(S)).
            std::vector<std::vector<std::vector<double>>> delta_powers(bank.num_features);
            for (std::size_t f = 0; f < bank.num_features; ++f)
                delta_powers[f] = shift_power_trace(s, bank.order, delta[f]);
            std::vector<std::vector<double>> d_prev(g_count, std::vector<double>(n, 0.0));
            for (std::size_t f = 0; f < bank.num_features; ++f) {
                for (std::size_t g = 0; g < g_count; ++g) {
                    const auto h = bank.taps(l, f, g);
                    for (std::size_t k = 0; k < k1; ++k) axpy(h[k], delta_powers[f][k], d_prev[g]);
                }
            }
            d_post = std::move(d_prev);
        }
    }

    add_regularizer_gradient(bank, trace.spectral, eigenvalues, spec.gamma, spec.mode, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Optimizers.

struct OptimizerState {
    std::size_t step_count = 0;
    GradientSet first_moment, second_moment;
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static OptimizerState adam(const ModelParams& params, double alpha = 1e-3, double beta1 = 0.9,
                               double beta2 = 0.999) {
        OptimizerState s;
        s.first_moment = GradientSet::zeros_like(params);
        s.second_moment = GradientSet::zeros_like(params);
        s.alpha = alpha;
        s.beta1 = beta1;
        s.beta2 = beta2;
        return s;
    }
};

// Standard Adam with bias correction. Aborts on non-finite gradients before
// touching the parameters.
inline void adam_step(OptimizerState& state, ModelParams& params, const GradientSet& grads) {
    if (auto where = grads.first_non_finite())
        throw NumericError("adam_step: non-finite gradient at " + *where);
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    auto update = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    };
    for (std::size_t l = 0; l < params.bank.coeffs.size(); ++l)
        update(params.bank.coeffs[l], state.first_moment.bank[l], state.second_moment.bank[l],
               grads.bank[l]);
    update(params.readout_weight.values(), state.first_moment.readout_weight.values(),
           state.second_moment.readout_weight.values(), grads.readout_weight.values());
    update(params.readout_bias, state.first_moment.readout_bias, state.second_moment.readout_bias,
           grads.readout_bias);
}

// Plain stochastic gradient descent behind the same stepping interface.
inline void sgd_step(ModelParams& params, const GradientSet& grads, double alpha) {
    if (auto where = grads.first_non_finite())
        throw NumericError("sgd_step: non-finite gradient at " + *where);
    auto update = [&](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= alpha * g[i];
    };
    for (std::size_t l = 0; l < params.bank.coeffs.size(); ++l)
        update(params.bank.coeffs[l], grads.bank[l]);
    update(params.readout_weight.values(), grads.readout_weight.values());
    update(params.readout_bias, grads.readout_bias);
}

// ---------------------------------------------------------------------------
// Training loop.

enum class Optimizer { Adam, Sgd };

struct TrainConfig {
    std::size_t batch_size = 100;
    std::size_t max_iterations = 1000;
    std::size_t valid_every = 50;
    double grad_tolerance = 0.0;  // 0 disables the gradient-norm stop
    std::uint64_t seed = 1;
    LossSpec loss;
    Optimizer optimizer = Optimizer::Adam;
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
};

struct HistoryRow {
    std::size_t iter = 0;
    double objective = 0.0;
    double fit = 0.0;
    double regularizer = 0.0;
    std::vector<double> max_z;  // per layer
    double valid_metric = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    ModelParams params;  // best validation iterate
    ModelParams last;    // final iterate
    std::vector<HistoryRow> history;
    double best_metric = std::numeric_limits<double>::quiet_NaN();
};

// Model outputs for every sample; classification predicts the argmax logit.
inline double evaluate_metric(const ModelParams& params, const DenseMatrix& s, const Dataset& data) {
    if (data.samples.empty()) throw ConfigError("evaluate_metric: empty dataset");
    if (data.task == TaskKind::Classification) {
        std::vector<int> pred(data.samples.size()), label(data.samples.size());
        for (std::size_t i = 0; i < data.samples.size(); ++i) {
            const auto [output, _] = gnn_forward(params, s, data.samples[i].x);
            pred[i] = static_cast<int>(
                std::max_element(output.begin(), output.end()) - output.begin());
            label[i] = data.samples[i].label();
        }
        return accuracy(pred, label);
    }
    std::vector<double> pred(data.samples.size()), target(data.samples.size());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto [output, _] = gnn_forward(params, s, data.samples[i].x);
        pred[i] = output[data.samples[i].target_index];
        target[i] = data.samples[i].y;
    }
    return rmse(pred, target);
}

// Minibatch training with epoch shuffling (sampling without replacement),
// stopping at max_iterations or when the gradient norm falls below the
// tolerance. Returns the parameters with the best validation metric seen.
inline TrainResult train(const TrainConfig& config, const ModelParams& initial, const Graph& graph,
                         const EigenDecomposition& eig, const Dataset& train_set,
                         const Dataset& valid_set) {
    if (train_set.samples.empty() || valid_set.samples.empty())
        throw ConfigError("train: datasets must be non-empty");
    if (config.batch_size == 0 || config.max_iterations == 0)
        throw ConfigError("train: batch size and iteration count must be >= 1");
    config.loss.validate();

    TrainResult result;
    result.params = initial;
    ModelParams params = initial;
    OptimizerState opt = OptimizerState::adam(params, config.alpha, config.beta1, config.beta2);

    const bool maximize = config.loss.task == TaskKind::Classification;
    double best = maximize ? -std::numeric_limits<double>::infinity()
                           : std::numeric_limits<double>::infinity();
    double last_valid = std::numeric_limits<double>::quiet_NaN();

    Rng rng(config.seed);
    std::vector<std::size_t> order(train_set.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();  // forces a shuffle on first use

    std::vector<Sample> batch;
    result.history.reserve(config.max_iterations);
    for (std::size_t iter = 1; iter <= config.max_iterations; ++iter) {
        batch.clear();
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(train_set.samples[order[cursor++]]);
        }

        auto [parts, trace] = forward_batch(params, graph.shift, eig.eigenvalues, batch, config.loss);
        GradientSet grads = backward(trace, params, graph.shift, eig.eigenvalues, batch, config.loss);
        const double gnorm = grads.norm2();

        if (config.optimizer == Optimizer::Adam)
            adam_step(opt, params, grads);
        else
            sgd_step(params, grads, config.alpha);

        const bool last_iter =
            iter == config.max_iterations ||
            (config.grad_tolerance > 0.0 && gnorm <= config.grad_tolerance);
        if ((config.valid_every > 0 && iter % config.valid_every == 0) || last_iter) {
            last_valid = evaluate_metric(params, graph.shift, valid_set);
            if (maximize ? last_valid > best : last_valid < best) {
                best = last_valid;
                result.params = params;
            }
        }

        HistoryRow row;
        row.iter = iter;
        row.objective = parts.total;
        row.fit = parts.fit;
        row.regularizer = config.loss.gamma * parts.regularizer;  // objective = fit + regularizer
        row.max_z = trace.spectral.max_z;
        row.valid_metric = last_valid;
        result.history.push_back(std::move(row));

        if (last_iter) break;
    }
    result.last = std::move(params);
    result.best_metric = best;
    return result;
}

// Training-history CSV: iter,objective,fit,regularizer,max_z_layer_1..L,valid_metric.
inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<HistoryRow>& history, std::size_t layers) {
    std::ofstream out(path);
    if (!out) throw DataError("write_history_csv: cannot open " + path.string());
    out << "iter,objective,fit,regularizer";
    for (std::size_t l = 1; l <= layers; ++l) out << ",max_z_layer_" << l;
    out << ",valid_metric\n";
    for (const HistoryRow& row : history) {
        out << row.iter << ',' << fmt_g17(row.objective) << ',' << fmt_g17(row.fit) << ','
            << fmt_g17(row.regularizer);
        for (double z : row.max_z) out << ',' << fmt_g17(z);
        out << ',' << fmt_g17(row.valid_metric) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

namespace detail {

// Activation-pattern fingerprint used to detect kink crossings: ReLU signs,
// spectral argmaxes, and the sign of (1 - max z) per layer. A parameter whose
// +/- evaluations disagree here sits on a subgradient boundary, where central
// differences are meaningless.
struct KinkFingerprint {
    std::vector<char> relu;
    std::vector<std::size_t> argmax;
    std::vector<char> reg_sign;
    bool near_kink = false;

    bool operator==(const KinkFingerprint&) const = default;
};

inline KinkFingerprint fingerprint(const BatchTrace& trace, RegularizerMode mode,
                                   double kink_tol) {
    KinkFingerprint fp;
    for (const ForwardTrace& ft : trace.samples) {
        for (const LayerTrace& lt : ft.layers) {
            for (const auto& pre : lt.pre) {
                for (double u : pre) {
                    fp.relu.push_back(u > 0.0 ? 1 : 0);
                    if (std::abs(u) < kink_tol) fp.near_kink = true;
                }
            }
        }
    }
    if (mode != RegularizerMode::None) {
        for (std::size_t l = 0; l < trace.spectral.max_z.size(); ++l) {
            const std::size_t i_star = trace.spectral.best_index[l];
            fp.argmax.push_back(i_star);
            fp.argmax.push_back(trace.spectral.best_feature[l][i_star]);
            const double gap = 1.0 - trace.spectral.max_z[l];
            fp.reg_sign.push_back(gap > 0.0 ? 1 : (gap < 0.0 ? 2 : 0));
            if (std::abs(gap) < kink_tol) fp.near_kink = true;
        }
    }
    return fp;
}

}  // namespace detail

// Central finite differences on every parameter against the reverse-mode
// gradient; returns the max relative error over parameters that do not sit on
// a ReLU/max kink (within 1e-7, or a pattern flip between the two probes).
inline double finite_diff_check(const ModelParams& params, const DenseMatrix& s,
                                std::span<const double> eigenvalues, std::span<const Sample> batch,
                                const LossSpec& spec, double step) {
    if (step <= 0.0) throw ConfigError("finite_diff_check: step must be positive");
    const GradientSet grads =
        backward(forward_batch(params, s, eigenvalues, batch, spec).second, params, s, eigenvalues,
                 batch, spec);

    constexpr double kKinkTol = 1e-7;
    ModelParams probe = params;
    double worst = 0.0;
    const std::size_t count = detail::param_count(probe);
    for (std::size_t idx = 0; idx < count; ++idx) {
        double* p = detail::param_at(probe, idx);
        const double saved = *p;

        *p = saved + step;
        auto [plus, trace_plus] = forward_batch(probe, s, eigenvalues, batch, spec);
        const auto fp_plus = detail::fingerprint(trace_plus, spec.mode, kKinkTol);
        *p = saved - step;
        auto [minus, trace_minus] = forward_batch(probe, s, eigenvalues, batch, spec);
        const auto fp_minus = detail::fingerprint(trace_minus, spec.mode, kKinkTol);
        *p = saved;

        if (fp_plus.near_kink || fp_minus.near_kink || !(fp_plus == fp_minus)) continue;
        const double g_fd = (plus.total - minus.total) / (2.0 * step);
        const double g_bp = detail::grad_at(grads, idx);
        const double err =
            std::abs(g_fd - g_bp) / std::max(1e-12, std::abs(g_fd) + std::abs(g_bp));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace specgnn
