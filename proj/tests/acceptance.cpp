// Acceptance suite: one criterion per function, one [PASS]/[FAIL] line each,
// nonzero exit when anything fails. Checks that depend on the official
// MovieLens-100k file are gated on its presence (SPECGNN_ML100K or
// data/ml-100k) and reported as [SKIP] when the file is absent; the rest of
// that pipeline then runs on a synthetic table with the same shape.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "specgnn/experiment.hpp"
#include "synthetic_movielens.hpp"

using namespace specgnn;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(clock_type::time_point start) {
    return std::chrono::duration<double>(clock_type::now() - start).count();
}

void report(bool pass, const std::string& label, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", label.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

void report_skip(const std::string& label, const std::string& detail) {
    std::printf("[SKIP] %s: %s\n", label.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// --------------------------------------------------------------------------
// 1. Spectral fidelity on random graphs and filters.

void criterion_1() {
    const auto start = clock_type::now();
    double worst_filter = 0.0, worst_outputs = 0.0;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        Rng rng(derive_seed(101, trial));
        const std::size_t n = 4 + rng.uniform_index(17);  // 4..20
        const Graph g = normalize_shift(sbm_generate(n, 1, 0.6, 0.6, derive_seed(102, trial)));
        const auto eig = jacobi_eigh(g.shift);

        const std::size_t order = rng.uniform_index(6);  // K in 0..5
        std::vector<double> h(order + 1);
        for (double& c : h) c = rng.uniform(-1.0, 1.0);
        std::vector<double> x(n);
        for (double& v : x) v = rng.normal();

        const auto vertex = filter_apply(h, g.shift, x);
        std::vector<double> xhat = gft(eig.eigenvectors, x);
        for (std::size_t i = 0; i < n; ++i) xhat[i] *= spectral_response(h, eig.eigenvalues[i]);
        const auto spectral = inverse_gft(eig.eigenvectors, xhat);
        std::vector<double> diff = vertex;
        axpy(-1.0, spectral, diff);
        worst_filter = std::max(worst_filter, norm2(diff) / norm2(x));

        FilterBank bank = FilterBank::zeros(2, 3, 5);
        for (auto& layer : bank.coeffs)
            for (double& c : layer) c = rng.uniform(-0.6, 0.6);
        const SpectralOutputs direct = spectral_outputs(bank, eig.eigenvalues);
        const auto literal = spectral_outputs_via_eigenvectors(bank, g.shift, eig.eigenvectors);
        for (std::size_t l = 0; l < 2; ++l)
            worst_outputs = std::max(worst_outputs, max_abs_diff(direct.z[l], literal[l]));
    }
    const double elapsed = seconds_since(start);
    report(worst_filter <= 1e-8 && worst_outputs <= 1e-9 && elapsed < 10.0,
           "criterion 1 (spectral fidelity)",
           "filter rel err " + fmt(worst_filter) + ", spectral-output err " + fmt(worst_outputs) +
               ", " + fmt(elapsed) + " s over 50 graphs");
}

// --------------------------------------------------------------------------
// 2. Eigensolver quality up to n = 400.

void criterion_2() {
    double worst_recon = 0.0, worst_orth = 0.0, time_400 = 0.0;
    for (const std::size_t n : {std::size_t{50}, std::size_t{150}, std::size_t{400}}) {
        Rng rng(derive_seed(202, n));
        DenseMatrix a(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = rng.uniform(-1.0, 1.0);
        const auto start = clock_type::now();
        const auto e = jacobi_eigh(a);
        if (n == 400) time_400 = seconds_since(start);

        const DenseMatrix& v = e.eigenvectors;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double recon = 0.0, gram = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    recon += v(i, k) * e.eigenvalues[k] * v(j, k);
                    gram += v(k, i) * v(k, j);
                }
                worst_recon = std::max(worst_recon, std::abs(recon - a(i, j)));
                worst_orth = std::max(worst_orth, std::abs(gram - (i == j ? 1.0 : 0.0)));
            }
        }
    }
    report(worst_recon <= 1e-8 && worst_orth <= 1e-9 && time_400 < 60.0,
           "criterion 2 (eigensolver to n=400)",
           "reconstruction " + fmt(worst_recon) + ", orthogonality " + fmt(worst_orth) +
               ", n=400 in " + fmt(time_400) + " s");
}

// --------------------------------------------------------------------------
// 3. Gradient correctness on the full regularized objective.

void criterion_3() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Graph g = normalize_shift(sbm_generate(10, 2, 0.9, 0.3, derive_seed(301, seed)));
        const auto eig = jacobi_eigh(g.shift);
        Rng rng(derive_seed(302, seed));
        std::vector<Sample> batch(6);
        for (Sample& s : batch) {
            s.x.resize(10);
            for (double& v : s.x) v = rng.normal();
            s.y = static_cast<double>(rng.uniform_index(3));
        }
        const ModelParams params = init_params(2, 3, 2, 10, 3, derive_seed(303, seed));
        const LossSpec spec{TaskKind::Classification, 0.1, RegularizerMode::MaxToOne};
        // Step 1e-5: small enough for truncation, large enough that the
        // objective's 1e-16 evaluation noise does not swamp tiny partials.
        worst = std::max(worst,
                         finite_diff_check(params, g.shift, eig.eigenvalues, batch, spec, 1e-5));
    }
    report(worst <= 1e-4, "criterion 3 (gradient correctness)",
           "max relative error " + fmt(worst) + " over 20 seeds");
}

// --------------------------------------------------------------------------
// 4. Permutation equivariance of the trunk; invariance of spectral outputs.

void criterion_4() {
    const Graph g = normalize_shift(sbm_generate(20, 2, 0.8, 0.4, 404));
    Rng rng(405);
    FilterBank bank = FilterBank::zeros(2, 4, 3);
    for (auto& layer : bank.coeffs)
        for (double& c : layer) c = rng.uniform(-0.6, 0.6);
    std::vector<double> x(20);
    for (double& v : x) v = rng.normal();

    const ForwardTrace base = trunk_forward(bank, g.shift, x);
    const auto z_base = spectral_outputs(bank, jacobi_eigh(g.shift).eigenvalues);

    double worst_equi = 0.0, worst_inv = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const PermutationMap p = PermutationMap::random(20, rng);
        const DenseMatrix sp = permute_graph(g.shift, p);
        const ForwardTrace permuted = trunk_forward(bank, sp, permute_signal(x, p));
        for (std::size_t f = 0; f < 4; ++f) {
            std::vector<double> feat(20), featp(20);
            for (std::size_t i = 0; i < 20; ++i) {
                feat[i] = base.features[f * 20 + i];
                featp[i] = permuted.features[f * 20 + i];
            }
            worst_equi = std::max(worst_equi, max_abs_diff(permute_signal(feat, p), featp));
        }
        const auto z_perm = spectral_outputs(bank, jacobi_eigh(sp).eigenvalues);
        for (std::size_t l = 0; l < 2; ++l)
            worst_inv = std::max(worst_inv, max_abs_diff(z_base.z[l], z_perm.z[l]));
    }
    report(worst_equi <= 1e-9 && worst_inv <= 1e-9, "criterion 4 (permutation equivariance)",
           "trunk equivariance err " + fmt(worst_equi) + ", spectral invariance err " +
               fmt(worst_inv) + " over 20 permutations");
}

// --------------------------------------------------------------------------
// 5 and 6 share one scaled-down source-localization run: SR and vanilla GNN
// trained from the same initialization, then compared on paired perturbations.

struct TrainedPair {
    Graph graph;
    EigenDecomposition eig;
    DatasetTriple data;
    TrainResult sr, vanilla;
    double train_seconds = 0.0;
};

TrainedPair train_scaled_pair() {
    const std::uint64_t seed = 1;
    TrainedPair out;
    out.graph = normalize_shift(sbm_generate(50, 5, 0.8, 0.2, derive_seed(seed, 0)));
    out.eig = jacobi_eigh(out.graph.shift);
    // Diffusion horizon 5 with noise 5e-3: longer horizons leave most samples
    // without usable community signal at n=50 (the fit cannot approach zero in
    // 3000 iterations), while the noise keeps the easy samples from rewarding
    // unbounded trunk gain.
    out.data = source_localization_dataset(out.graph, SplitSizes{2000, 500, 500}, 5, 5e-3,
                                           derive_seed(seed, 1))
                   .splits;
    const ModelParams initial = init_params(2, 16, 5, 50, 5, derive_seed(seed, 2));

    const auto start = clock_type::now();
    auto run = [&](RegularizerMode mode) {
        TrainConfig tc;
        tc.batch_size = 100;
        tc.max_iterations = 3000;
        tc.valid_every = 100;
        tc.seed = derive_seed(seed, 3);
        tc.alpha = 2e-3;
        tc.loss = LossSpec{TaskKind::Classification, 0.1, mode};
        return train(tc, initial, out.graph, out.eig, out.data.train, out.data.valid);
    };
    out.sr = run(RegularizerMode::MaxToOne);
    out.vanilla = run(RegularizerMode::None);
    out.train_seconds = seconds_since(start);
    return out;
}

void criterion_5(const TrainedPair& pair) {
    const HistoryRow& first = pair.sr.history.front();
    const HistoryRow& last = pair.sr.history.back();
    const double ratio = last.objective / first.objective;
    bool z_in_band = true;
    for (double z : last.max_z) z_in_band = z_in_band && z >= 0.8 && z <= 1.2;
    report(z_in_band && ratio < 0.25 && pair.train_seconds < 900.0,
           "criterion 5 (convergence behavior)",
           "final max_z [" + fmt(last.max_z[0]) + ", " + fmt(last.max_z[1]) + "], objective " +
               fmt(first.objective) + " -> " + fmt(last.objective) + " (ratio " + fmt(ratio) +
               "), SR+vanilla trained in " + fmt(pair.train_seconds) + " s");
}

void criterion_6(const TrainedPair& pair) {
    const std::uint64_t pseed = derive_seed(1, 1000);
    auto eval = [&](const ModelParams& params, double eps) {
        return stability_eval(params, pair.graph.shift, TaskKind::Classification, eps, 10,
                              pair.data.test, PerturbMode::Dense, pseed);
    };
    const StabilityPoint sr0 = eval(pair.sr.params, 0.0);
    const StabilityPoint vn0 = eval(pair.vanilla.params, 0.0);
    const StabilityPoint sr1 = eval(pair.sr.params, 0.01);
    const StabilityPoint vn1 = eval(pair.vanilla.params, 0.01);

    const bool dev_ordered = sr1.deviation_trunk < vn1.deviation_trunk;
    const bool acc_ordered = sr1.metric >= vn1.metric;
    // "Within 5 points of vanilla" guards the unperturbed performance of the
    // regularized model; outperforming vanilla satisfies it.
    const bool comparable_at_zero = sr0.metric >= vn0.metric - 0.05;
    report(dev_ordered && acc_ordered && comparable_at_zero,
           "criterion 6 (stability ordering)",
           "eps=0.01 trunk dev SR " + fmt(sr1.deviation_trunk) + " vs vanilla " +
               fmt(vn1.deviation_trunk) + "; acc SR " + fmt(sr1.metric) + " vs vanilla " +
               fmt(vn1.metric) + "; eps=0 acc SR " + fmt(sr0.metric) + " vs vanilla " +
               fmt(vn0.metric));
}

// --------------------------------------------------------------------------
// 7. First-order stability bound for single linear filters.

void criterion_7() {
    bool ok = true;
    std::string detail;
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const Graph g =
            normalize_shift(sbm_generate(20, 1, 0.5, 0.5, derive_seed(701, trial)));
        Rng rng(derive_seed(702, trial));
        std::vector<double> h(6);
        for (double& c : h) c = rng.uniform(-0.5, 0.5);
        std::vector<double> x(20);
        for (double& v : x) v = rng.normal();
        const auto base = filter_apply(h, g.shift, x);
        const ResponseConstants rc = estimate_response_constants(h, 2001);
        const double c_stab = stability_constant(20, 1, 1, rc.lipschitz, rc.bound);

        auto deviation = [&](double eps) {
            const DenseMatrix sp = perturb(g.shift, eps, PerturbMode::Dense,
                                           derive_seed(703, trial));
            std::vector<double> diff = filter_apply(h, sp, x);
            axpy(-1.0, base, diff);
            return norm2(diff);
        };
        for (const double eps : {1e-4, 1e-3}) {
            const double dev = deviation(eps);
            const double bound = c_stab * norm2(x) * eps;
            const double ratio = deviation(2.0 * eps) / dev;
            if (!(dev <= 10.0 * bound) || !(ratio >= 1.0 && ratio <= 4.0)) {
                ok = false;
                detail = "trial " + std::to_string(trial) + " eps " + fmt(eps) + ": dev " +
                         fmt(dev) + " bound " + fmt(bound) + " ratio " + fmt(ratio);
            }
        }
    }
    if (ok) detail = "deviation within 10x first-order bound, doubling ratio in [1, 4], 5 filters";
    report(ok, "criterion 7 (stability-bound diagnostic)", detail);
}

// --------------------------------------------------------------------------
// 8. MovieLens pipeline end to end.

fs::path movielens_dir_or_empty() {
    if (const char* env = std::getenv("SPECGNN_ML100K")) {
        if (fs::exists(fs::path(env) / "u.data")) return env;
    }
    for (const char* candidate : {"data/ml-100k", "../data/ml-100k", "../../data/ml-100k"}) {
        if (fs::exists(fs::path(candidate) / "u.data")) return candidate;
    }
    return {};
}

void criterion_8() {
    const auto start = clock_type::now();
    const fs::path official = movielens_dir_or_empty();
    RatingsTable table;
    if (!official.empty()) {
        table = load_movielens(official / "u.data");
        report(table.records.size() == 100000 && table.user_count == 943,
               "criterion 8a (official u.data ingest)",
               std::to_string(table.records.size()) + " records, " +
                   std::to_string(table.user_count) + " users");
    } else {
        report_skip("criterion 8a (official u.data ingest)",
                    "u.data not found (set SPECGNN_ML100K or place it in data/ml-100k); "
                    "running the pipeline on a synthetic table of the same shape");
        const auto synth_dir = fs::temp_directory_path() / "specgnn_synth_ml100k";
        table = load_movielens(specgnn_test::write_synthetic_movielens(synth_dir));
    }

    const MovieGraph mg = build_movie_graph(table, 400, 10);
    std::size_t min_degree = 400;
    for (std::size_t i = 0; i < 400; ++i) {
        std::size_t d = 0;
        for (std::size_t j = 0; j < 400; ++j)
            if (mg.graph.shift(i, j) != 0.0) ++d;
        min_degree = std::min(min_degree, d);
    }
    const auto eig = jacobi_eigh(mg.graph.shift);
    const bool spectrum_ok =
        eig.eigenvalues.front() >= -1.0 - 1e-9 && eig.eigenvalues.back() <= 1.0 + 1e-9;
    report(mg.graph.n() == 400 && min_degree >= 10 && spectrum_ok,
           "criterion 8b (movie graph)",
           "400 nodes, min degree " + std::to_string(min_degree) + ", spectrum [" +
               fmt(eig.eigenvalues.front()) + ", " + fmt(eig.eigenvalues.back()) + "]");

    const std::uint64_t seed = 800001;
    const DatasetTriple data =
        movie_dataset(table, mg.movie_ids, mg.movie_ids[0], 0.8, 0.1, derive_seed(seed, 1));
    const ModelParams initial = init_params(2, 8, 5, 400, 400, derive_seed(seed, 2));
    auto run = [&](RegularizerMode mode) {
        TrainConfig tc;
        tc.batch_size = 32;
        tc.max_iterations = 300;
        tc.valid_every = 50;
        tc.seed = derive_seed(seed, 3);
        tc.loss = LossSpec{TaskKind::Regression, 0.1, mode};
        return train(tc, initial, mg.graph, eig, data.train, data.valid);
    };
    const TrainResult sr = run(RegularizerMode::MaxToOne);
    const TrainResult vanilla = run(RegularizerMode::None);

    const std::uint64_t pseed = derive_seed(seed, 1000);
    auto eval = [&](const ModelParams& params, double eps) {
        return stability_eval(params, mg.graph.shift, TaskKind::Regression, eps, 5, data.test,
                              PerturbMode::Dense, pseed);
    };
    const double sr_rmse0 = eval(sr.params, 0.0).metric;
    const double vn_rmse0 = eval(vanilla.params, 0.0).metric;
    const double sr_rmse1 = eval(sr.params, 0.1).metric;
    const double vn_rmse1 = eval(vanilla.params, 0.1).metric;
    const double sr_degradation = sr_rmse1 - sr_rmse0;
    const double vn_degradation = vn_rmse1 - vn_rmse0;
    const double elapsed = seconds_since(start);
    report(sr_rmse0 < 1.5 && sr_degradation <= vn_degradation && elapsed < 1800.0,
           "criterion 8c (movie recommendation)",
           "SR RMSE " + fmt(sr_rmse0) + " (vanilla " + fmt(vn_rmse0) +
               "); degradation at eps=0.1: SR " + fmt(sr_degradation) + " vs vanilla " +
               fmt(vn_degradation) + "; " + fmt(elapsed) + " s");
}

// --------------------------------------------------------------------------
// 9. Full-run determinism.

void criterion_9() {
    ExperimentConfig cfg;
    cfg.task = ExperimentTask::SourceLocalization;
    cfg.seed = 909;
    cfg.trials = 2;
    cfg.eps = {0.0, 0.01};
    cfg.n = 12;
    cfg.communities = 3;
    cfg.p_intra = 0.9;
    cfg.p_inter = 0.3;
    cfg.sizes = SplitSizes{40, 10, 10};
    cfg.t_max = 4;
    cfg.layers = 1;
    cfg.features = 2;
    cfg.order = 2;
    cfg.batch = 8;
    cfg.iterations = 15;
    cfg.valid_every = 5;
    cfg.perturb_trials = 2;

    const auto dir1 = fs::temp_directory_path() / "specgnn_acceptance_det1";
    const auto dir2 = fs::temp_directory_path() / "specgnn_acceptance_det2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    emit_results(run_experiment(cfg), dir1);
    emit_results(run_experiment(cfg), dir2);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const bool identical = slurp(dir1 / "results.csv") == slurp(dir2 / "results.csv");
    report(identical, "criterion 9 (determinism)",
           identical ? "two runs produced bit-identical results.csv"
                     : "results.csv differs between identical runs");
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    const TrainedPair pair = train_scaled_pair();
    criterion_5(pair);
    criterion_6(pair);
    criterion_7();
    criterion_8();
    criterion_9();
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
