#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "specgnn/training.hpp"

namespace specgnn {

enum class ExperimentTask { SourceLocalization, MovieLens };

inline const char* to_string(ExperimentTask t) {
    return t == ExperimentTask::SourceLocalization ? "source-loc" : "movielens";
}

inline ExperimentTask experiment_task_from_string(const std::string& s) {
    if (s == "source-loc") return ExperimentTask::SourceLocalization;
    if (s == "movielens") return ExperimentTask::MovieLens;
    throw ConfigError("config: unknown task '" + s + "'");
}

struct ExperimentConfig {
    ExperimentTask task = ExperimentTask::SourceLocalization;
    std::uint64_t seed = 1;
    std::size_t trials = 10;
    std::vector<double> eps;  // defaulted per task when empty
    std::vector<RegularizerMode> modes = {RegularizerMode::None, RegularizerMode::MaxToZero,
                                          RegularizerMode::MaxToOne};
    std::string out_dir = "results";

    // source localization graph and data
    std::size_t n = 50;
    std::size_t communities = 5;
    double p_intra = 0.8;
    double p_inter = 0.2;
    SplitSizes sizes{10000, 2500, 2500};
    int t_max = 25;
    double noise_std = 1e-3;

    // movielens
    std::string ml_path = "data/ml-100k";
    std::size_t ml_movies = 400;
    std::size_t ml_neighbors = 10;
    int target_movie = -1;  // -1 = most-rated of the selected movies
    double frac_train = 0.8;
    double frac_valid = 0.1;

    // model
    std::size_t layers = 2;
    std::size_t features = 32;
    std::size_t order = 5;

    // training
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double gamma = 0.1;
    std::size_t batch = 100;
    std::size_t iterations = 3000;
    std::size_t valid_every = 50;
    double grad_tol = 0.0;
    Optimizer optimizer = Optimizer::Adam;

    // stability sweep
    std::size_t perturb_trials = 10;
    PerturbMode perturb_mode = PerturbMode::Dense;

    void validate() const {
        if (trials == 0) throw ConfigError("config: trials must be >= 1");
        if (eps.empty()) throw ConfigError("config: eps sweep must be non-empty");
        for (double e : eps)
            if (e < 0.0) throw ConfigError("config: eps values must be >= 0");
        if (!std::is_sorted(eps.begin(), eps.end()))
            throw ConfigError("config: eps values must be sorted ascending");
        if (modes.empty()) throw ConfigError("config: at least one regularizer mode");
        if (layers == 0 || features == 0) throw ConfigError("config: model needs layers and features");
        if (batch == 0 || iterations == 0) throw ConfigError("config: batch and iterations >= 1");
        if (gamma < 0.0) throw ConfigError("config: gamma must be >= 0");
        if (alpha <= 0.0) throw ConfigError("config: alpha must be > 0");
        if (perturb_trials == 0) throw ConfigError("config: perturb_trials must be >= 1");
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& section,
                                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" +
                              (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace detail

// Parses a config object, rejecting unknown keys at every level.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, "", {"task", "seed", "trials", "eps", "modes", "out", "graph",
                                        "data", "movielens", "model", "train", "stability"});
    ExperimentConfig c;
    std::string task_name = to_string(c.task);
    detail::read_field(j, "task", task_name);
    c.task = experiment_task_from_string(task_name);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "trials", c.trials);
    detail::read_field(j, "eps", c.eps);
    detail::read_field(j, "out", c.out_dir);
    if (j.contains("modes")) {
        std::vector<std::string> names;
        detail::read_field(j, "modes", names);
        c.modes.clear();
        for (const auto& m : names) c.modes.push_back(regularizer_mode_from_string(m));
    }
    if (j.contains("graph")) {
        const auto& g = j.at("graph");
        detail::reject_unknown_keys(g, "graph", {"n", "communities", "p_intra", "p_inter"});
        detail::read_field(g, "n", c.n);
        detail::read_field(g, "communities", c.communities);
        detail::read_field(g, "p_intra", c.p_intra);
        detail::read_field(g, "p_inter", c.p_inter);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown_keys(d, "data", {"train", "valid", "test", "t_max", "noise_std"});
        detail::read_field(d, "train", c.sizes.train);
        detail::read_field(d, "valid", c.sizes.valid);
        detail::read_field(d, "test", c.sizes.test);
        detail::read_field(d, "t_max", c.t_max);
        detail::read_field(d, "noise_std", c.noise_std);
    }
    if (j.contains("movielens")) {
        const auto& m = j.at("movielens");
        detail::reject_unknown_keys(
            m, "movielens", {"path", "movies", "neighbors", "target_movie", "frac_train", "frac_valid"});
        detail::read_field(m, "path", c.ml_path);
        detail::read_field(m, "movies", c.ml_movies);
        detail::read_field(m, "neighbors", c.ml_neighbors);
        detail::read_field(m, "target_movie", c.target_movie);
        detail::read_field(m, "frac_train", c.frac_train);
        detail::read_field(m, "frac_valid", c.frac_valid);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown_keys(m, "model", {"layers", "features", "order"});
        detail::read_field(m, "layers", c.layers);
        detail::read_field(m, "features", c.features);
        detail::read_field(m, "order", c.order);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown_keys(t, "train",
                                    {"alpha", "beta1", "beta2", "gamma", "batch", "iterations",
                                     "valid_every", "grad_tol", "optimizer"});
        detail::read_field(t, "alpha", c.alpha);
        detail::read_field(t, "beta1", c.beta1);
        detail::read_field(t, "beta2", c.beta2);
        detail::read_field(t, "gamma", c.gamma);
        detail::read_field(t, "batch", c.batch);
        detail::read_field(t, "iterations", c.iterations);
        detail::read_field(t, "valid_every", c.valid_every);
        detail::read_field(t, "grad_tol", c.grad_tol);
        std::string opt = c.optimizer == Optimizer::Adam ? "adam" : "sgd";
        detail::read_field(t, "optimizer", opt);
        if (opt == "adam")
            c.optimizer = Optimizer::Adam;
        else if (opt == "sgd")
            c.optimizer = Optimizer::Sgd;
        else
            throw ConfigError("config: unknown optimizer '" + opt + "'");
    }
    if (j.contains("stability")) {
        const auto& s = j.at("stability");
        detail::reject_unknown_keys(s, "stability", {"perturb_trials", "mode"});
        detail::read_field(s, "perturb_trials", c.perturb_trials);
        std::string mode = to_string(c.perturb_mode);
        detail::read_field(s, "mode", mode);
        c.perturb_mode = perturb_mode_from_string(mode);
    }
    if (c.eps.empty()) {
        const double top = c.task == ExperimentTask::SourceLocalization ? 0.01 : 0.1;
        for (int i = 0; i < 6; ++i) c.eps.push_back(top * i / 5.0);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Stability evaluation.

struct StabilityPoint {
    double metric = 0.0;           // task metric on the perturbed graph
    double deviation_trunk = 0.0;  // mean ||trunk(x;S) - trunk(x;S_tilde)||_2
    double deviation_out = 0.0;    // same for post-readout outputs
};

// Draws `trials` perturbations of size eps, runs the model on each perturbed
// graph over the test set, and reports the mean task metric and the mean l2
// deviations from the unperturbed outputs. Models evaluated with the same
// seed see identical perturbations, which is what makes comparisons paired.
inline StabilityPoint stability_eval(const ModelParams& params, const DenseMatrix& s,
                                     TaskKind task, double eps, std::size_t trials,
                                     const Dataset& test, PerturbMode mode, std::uint64_t seed) {
    if (trials == 0) throw ConfigError("stability_eval: trials must be >= 1");
    if (test.samples.empty()) throw ConfigError("stability_eval: empty test set");
    const std::size_t count = test.samples.size();

    std::vector<std::vector<double>> base_features(count), base_outputs(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto [output, trace] = gnn_forward(params, s, test.samples[i].x);
        base_outputs[i] = std::move(output);
        base_features[i] = std::move(trace.features);
    }

    if (eps == 0.0) trials = 1;  // perturbation is exact, every draw is identical
    StabilityPoint point;
    std::vector<int> pred_c(count), label_c(count);
    std::vector<double> pred_r(count), target_r(count);
    for (std::size_t j = 0; j < trials; ++j) {
        const DenseMatrix perturbed = perturb(s, eps, mode, derive_seed(seed, j));
        for (std::size_t i = 0; i < count; ++i) {
            const Sample& sample = test.samples[i];
            auto [output, trace] = gnn_forward(params, perturbed, sample.x);
            std::vector<double> diff_f = trace.features;
            axpy(-1.0, base_features[i], diff_f);
            point.deviation_trunk += norm2(diff_f);
            std::vector<double> diff_o = output;
            axpy(-1.0, base_outputs[i], diff_o);
            point.deviation_out += norm2(diff_o);
            if (task == TaskKind::Classification) {
                pred_c[i] = static_cast<int>(
                    std::max_element(output.begin(), output.end()) - output.begin());
                label_c[i] = sample.label();
            } else {
                pred_r[i] = output[sample.target_index];
                target_r[i] = sample.y;
            }
        }
        point.metric +=
            task == TaskKind::Classification ? accuracy(pred_c, label_c) : rmse(pred_r, target_r);
    }
    const double denom = static_cast<double>(trials);
    point.metric /= denom;
    point.deviation_trunk /= denom * static_cast<double>(count);
    point.deviation_out /= denom * static_cast<double>(count);
    return point;
}

// ---------------------------------------------------------------------------
// Experiment driver.

struct ResultRecord {
    std::string model;
    double eps = 0.0;
    std::uint64_t seed = 0;
    double metric = 0.0;
    double deviation_trunk = 0.0;
    double deviation_out = 0.0;
    std::vector<double> max_z;  // per layer, at the evaluated parameters
    double c_upper = 0.0;       // measured max |h(lambda)| over the bank
    double c_lip = 0.0;         // measured max |h'(lambda)| over the bank
    double c_stability = 0.0;
};

struct TrainedHistory {
    std::string model;
    std::uint64_t seed = 0;
    std::vector<HistoryRow> history;
};

struct ExperimentOutput {
    std::vector<ResultRecord> records;
    std::vector<TrainedHistory> histories;
    std::size_t layers = 0;
};

namespace detail {

struct MeasuredConstants {
    double c_upper = 0.0;
    double c_lip = 0.0;
};

inline MeasuredConstants measure_bank_constants(const FilterBank& bank, std::size_t grid_size) {
    MeasuredConstants m;
    for (std::size_t l = 0; l < bank.num_layers; ++l)
        for (std::size_t f = 0; f < bank.num_features; ++f)
            for (std::size_t g = 0; g < bank.in_features(l); ++g) {
                const ResponseConstants rc =
                    estimate_response_constants(bank.taps(l, f, g), grid_size);
                m.c_upper = std::max(m.c_upper, rc.bound);
                m.c_lip = std::max(m.c_lip, rc.lipschitz);
            }
    return m;
}

}  // namespace detail

// Trains one model per regularizer mode from a shared initialization for each
// trial, then evaluates all of them on identical perturbations at every eps.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentOutput out;
    out.layers = cfg.layers;

    // MovieLens inputs do not depend on the trial; build them once.
    RatingsTable table;
    MovieGraph movie;
    EigenDecomposition movie_eig;
    if (cfg.task == ExperimentTask::MovieLens) {
        table = load_movielens(std::filesystem::path(cfg.ml_path) / "u.data");
        movie = build_movie_graph(table, cfg.ml_movies, cfg.ml_neighbors);
        movie_eig = jacobi_eigh(movie.graph.shift);
    }

    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t trial_seed = derive_seed(cfg.seed, trial);

        Graph graph;
        EigenDecomposition eig;
        DatasetTriple data;
        if (cfg.task == ExperimentTask::SourceLocalization) {
            const Graph raw = sbm_generate(cfg.n, cfg.communities, cfg.p_intra, cfg.p_inter,
                                           derive_seed(trial_seed, 0));
            graph = normalize_shift(raw);
            eig = jacobi_eigh(graph.shift);
            data = source_localization_dataset(graph, cfg.sizes, cfg.t_max, cfg.noise_std,
                                               derive_seed(trial_seed, 1))
                       .splits;
        } else {
            graph = movie.graph;
            eig = movie_eig;
            const int target = cfg.target_movie >= 0 ? cfg.target_movie : movie.movie_ids[0];
            data = movie_dataset(table, movie.movie_ids, target, cfg.frac_train, cfg.frac_valid,
                                 derive_seed(trial_seed, 1));
        }

        const std::size_t out_dim =
            data.train.task == TaskKind::Classification ? data.train.classes : graph.n();
        const ModelParams initial = init_params(cfg.layers, cfg.features, cfg.order, graph.n(),
                                                out_dim, derive_seed(trial_seed, 2));

        for (RegularizerMode mode : cfg.modes) {
            TrainConfig tc;
            tc.batch_size = cfg.batch;
            tc.max_iterations = cfg.iterations;
            tc.valid_every = cfg.valid_every;
            tc.grad_tolerance = cfg.grad_tol;
            tc.seed = derive_seed(trial_seed, 3);  // same batch order for every mode
            tc.loss = LossSpec{data.train.task, cfg.gamma, mode};
            tc.optimizer = cfg.optimizer;
            tc.alpha = cfg.alpha;
            tc.beta1 = cfg.beta1;
            tc.beta2 = cfg.beta2;

            const TrainResult trained = train(tc, initial, graph, eig, data.train, data.valid);
            out.histories.push_back({to_string(mode), trial_seed, trained.history});

            const SpectralOutputs spectral =
                spectral_outputs(trained.params.bank, eig.eigenvalues);
            const detail::MeasuredConstants mc =
                detail::measure_bank_constants(trained.params.bank, 1001);
            const double c_stab =
                stability_constant(graph.n(), cfg.layers, cfg.features, mc.c_lip, mc.c_upper);

            for (std::size_t ei = 0; ei < cfg.eps.size(); ++ei) {
                const StabilityPoint point = stability_eval(
                    trained.params, graph.shift, data.train.task, cfg.eps[ei], cfg.perturb_trials,
                    data.test, cfg.perturb_mode, derive_seed(trial_seed, 1000 + ei));
                ResultRecord rec;
                rec.model = to_string(mode);
                rec.eps = cfg.eps[ei];
                rec.seed = trial_seed;
                rec.metric = point.metric;
                rec.deviation_trunk = point.deviation_trunk;
                rec.deviation_out = point.deviation_out;
                rec.max_z = spectral.max_z;
                rec.c_upper = mc.c_upper;
                rec.c_lip = mc.c_lip;
                rec.c_stability = c_stab;
                out.records.push_back(std::move(rec));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result serialization.

inline std::string results_csv_header(std::size_t layers) {
    std::string h = "model,eps,seed,metric,deviation_trunk,deviation_out";
    for (std::size_t l = 1; l <= layers; ++l) h += ",max_z_l" + std::to_string(l);
    h += ",C_U,C_L,C_bound";
    return h;
}

// Writes results.csv, summary.json (per-model-per-eps mean/std), and one
// history_<model>_<seed>.csv per trained model.
inline void emit_results(const ExperimentOutput& output, const std::filesystem::path& dir) {
    if (output.records.empty()) throw ConfigError("emit_results: no records");
    std::filesystem::create_directories(dir);

    std::vector<ResultRecord> records = output.records;
    std::stable_sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
        if (a.model != b.model) return a.model < b.model;
        if (a.eps != b.eps) return a.eps < b.eps;
        return a.seed < b.seed;
    });

    {
        std::ofstream out(dir / "results.csv");
        if (!out) throw DataError("emit_results: cannot open results.csv");
        out << results_csv_header(output.layers) << '\n';
        for (const ResultRecord& r : records) {
            out << r.model << ',' << fmt_g17(r.eps) << ',' << r.seed << ',' << fmt_g17(r.metric)
                << ',' << fmt_g17(r.deviation_trunk) << ',' << fmt_g17(r.deviation_out);
            for (double z : r.max_z) out << ',' << fmt_g17(z);
            out << ',' << fmt_g17(r.c_upper) << ',' << fmt_g17(r.c_lip) << ','
                << fmt_g17(r.c_stability) << '\n';
        }
        if (!out) throw DataError("emit_results: write failed for results.csv");
    }

    {
        std::map<std::string, std::map<std::string, std::vector<const ResultRecord*>>> groups;
        for (const ResultRecord& r : records) groups[r.model][fmt_g17(r.eps)].push_back(&r);
        nlohmann::json summary;
        auto stats = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size());
            return std::make_pair(mean, std::sqrt(var));
        };
        for (const auto& [model, by_eps] : groups) {
            for (const auto& [eps, rs] : by_eps) {
                std::vector<double> metric, dev_t, dev_o;
                for (const ResultRecord* r : rs) {
                    metric.push_back(r->metric);
                    dev_t.push_back(r->deviation_trunk);
                    dev_o.push_back(r->deviation_out);
                }
                auto [m_mean, m_std] = stats(metric);
                auto [t_mean, t_std] = stats(dev_t);
                auto [o_mean, o_std] = stats(dev_o);
                summary[model][eps] = {{"trials", rs.size()},
                                       {"metric_mean", m_mean},
                                       {"metric_std", m_std},
                                       {"deviation_trunk_mean", t_mean},
                                       {"deviation_trunk_std", t_std},
                                       {"deviation_out_mean", o_mean},
                                       {"deviation_out_std", o_std}};
            }
        }
        std::ofstream out(dir / "summary.json");
        if (!out) throw DataError("emit_results: cannot open summary.json");
        out << summary.dump(1) << '\n';
    }

    for (const TrainedHistory& h : output.histories) {
        const std::string name = "history_" + h.model + "_" + std::to_string(h.seed) + ".csv";
        write_history_csv(dir / name, h.history, output.layers);
    }
}

}  // namespace specgnn
