#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specgnn/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int run_command(const std::string& config_path, const CLI::App* cmd, double gamma,
                std::uint64_t seed, std::size_t trials, const std::vector<double>& eps,
                const std::string& out_dir) {
    specgnn::ExperimentConfig cfg = specgnn::load_config(config_path);
    if (cmd->count("--gamma")) cfg.gamma = gamma;
    if (cmd->count("--seed")) cfg.seed = seed;
    if (cmd->count("--trials")) cfg.trials = trials;
    if (cmd->count("--eps")) cfg.eps = eps;
    if (cmd->count("--out")) cfg.out_dir = out_dir;
    cfg.validate();

    const specgnn::ExperimentOutput output = specgnn::run_experiment(cfg);
    specgnn::emit_results(output, cfg.out_dir);
    std::cout << "wrote " << cfg.out_dir << "/results.csv (" << output.records.size()
              << " records), summary.json, " << output.histories.size() << " history files\n";
    return 0;
}

int gradcheck_command(std::uint64_t seed, double step, double gamma, std::size_t repeats) {
    using namespace specgnn;
    double worst = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
        const std::uint64_t s = derive_seed(seed, r);
        const Graph graph = normalize_shift(sbm_generate(10, 2, 0.9, 0.3, derive_seed(s, 0)));
        const EigenDecomposition eig = jacobi_eigh(graph.shift);
        Rng rng(derive_seed(s, 1));
        std::vector<Sample> batch(6);
        for (Sample& sample : batch) {
            sample.x.resize(graph.n());
            for (double& v : sample.x) v = rng.normal();
            sample.y = static_cast<double>(rng.uniform_index(2));
        }
        const ModelParams params = init_params(2, 3, 2, graph.n(), 2, derive_seed(s, 2));
        const LossSpec spec{TaskKind::Classification, gamma, RegularizerMode::MaxToOne};
        worst = std::max(worst, finite_diff_check(params, graph.shift, eig.eigenvalues, batch,
                                                  spec, step));
    }
    std::cout << "max relative gradient error: " << specgnn::fmt_g17(worst) << '\n';
    if (worst > 1e-4) {
        std::cerr << "gradcheck failed: error above 1e-4\n";
        return kExitNumeric;
    }
    return 0;
}

int eig_command(const std::string& graph_path) {
    const specgnn::Graph g = specgnn::load_graph(graph_path);
    const specgnn::EigenDecomposition eig = specgnn::jacobi_eigh(g.shift);
    for (double v : eig.eigenvalues) std::cout << specgnn::fmt_g17(v) << '\n';
    return 0;
}

int movielens_command(const std::string& dir) {
    const specgnn::RatingsTable table =
        specgnn::load_movielens(std::filesystem::path(dir) / "u.data");
    std::cout << "records: " << table.records.size() << '\n'
              << "users: " << table.user_count << '\n'
              << "movies: " << table.movie_count << '\n'
              << "duplicates: " << table.duplicate_count << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polynomial graph filter networks with spectral self-regularization"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    std::string config_path;
    run->add_option("--config", config_path, "JSON config file")->required();
    double gamma = 0.0;
    std::uint64_t seed_override = 0;
    std::size_t trials = 0;
    std::vector<double> eps;
    std::string out_dir;
    run->add_option("--gamma", gamma, "override regularization weight");
    run->add_option("--seed", seed_override, "override experiment seed");
    run->add_option("--trials", trials, "override trial count");
    run->add_option("--eps", eps, "override perturbation sweep")->delimiter(',');
    run->add_option("--out", out_dir, "override output directory");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::uint64_t gc_seed = 1;
    double gc_step = 1e-6, gc_gamma = 0.1;
    std::size_t gc_repeats = 5;
    gradcheck->add_option("--seed", gc_seed, "base seed");
    gradcheck->add_option("--step", gc_step, "finite-difference step");
    gradcheck->add_option("--gamma", gc_gamma, "regularization weight");
    gradcheck->add_option("--repeats", gc_repeats, "number of random instances");

    auto* eig = app.add_subcommand("eig", "print the eigenvalues of a saved graph");
    std::string graph_path;
    eig->add_option("--graph", graph_path, "graph file")->required();

    auto* data = app.add_subcommand("data", "dataset utilities");
    auto* movielens = data->add_subcommand("movielens", "summarize a MovieLens-100k directory");
    std::string ml_dir;
    movielens->add_option("--path", ml_dir, "directory containing u.data")->required();
    data->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (run->parsed())
            return run_command(config_path, run, gamma, seed_override, trials, eps, out_dir);
        if (gradcheck->parsed()) return gradcheck_command(gc_seed, gc_step, gc_gamma, gc_repeats);
        if (eig->parsed()) return eig_command(graph_path);
        if (movielens->parsed()) return movielens_command(ml_dir);
    } catch (const specgnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const specgnn::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const specgnn::Error& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return 0;
}
