#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "specgnn/model.hpp"
#include "specgnn/graph.hpp"

using namespace specgnn;

namespace {

DenseMatrix path3_adjacency() {
    DenseMatrix a(3, 3);
    a(0, 1) = a(1, 0) = 1.0;
    a(1, 2) = a(2, 1) = 1.0;
    return a;
}

Graph random_graph(std::size_t n, std::uint64_t seed) {
    return normalize_shift(sbm_generate(n, 1, 0.5, 0.5, seed).shift);
}

FilterBank random_bank(std::size_t layers, std::size_t features, std::size_t order, Rng& rng,
                       double scale = 0.5) {
    FilterBank b = FilterBank::zeros(layers, features, order);
    for (auto& layer : b.coeffs)
        for (double& c : layer) c = rng.uniform(-scale, scale);
    return b;
}

// Spectral-domain filtering oracle: V diag(h(lambda_i)) V^T x.
std::vector<double> spectral_filter_oracle(std::span<const double> h,
                                           const EigenDecomposition& eig,
                                           std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> xhat = gft(eig.eigenvectors, x);
    for (std::size_t i = 0; i < n; ++i) xhat[i] *= spectral_response(h, eig.eigenvalues[i]);
    return inverse_gft(eig.eigenvectors, xhat);
}

}  // namespace

TEST_CASE("filter_apply basics") {
    const DenseMatrix s = path3_adjacency();
    const std::vector<double> e1{1.0, 0.0, 0.0};
    CHECK(filter_apply(std::vector<double>{1.0, 0.0, 0.0}, s, e1) == e1);
    CHECK(filter_apply(std::vector<double>{0.0, 1.0}, s, e1) ==
          std::vector<double>{0.0, 1.0, 0.0});
    // (I + S) e1 = e1 + e2 on the path.
    CHECK(filter_apply(std::vector<double>{1.0, 1.0}, s, e1) ==
          std::vector<double>{1.0, 1.0, 0.0});
}

TEST_CASE("spectral_response polynomial arithmetic") {
    const std::vector<double> constant{2.5};
    CHECK(spectral_response(constant, -0.7) == 2.5);
    CHECK(spectral_response_derivative(constant, -0.7) == 0.0);

    const std::vector<double> h{1.0, 2.0, 3.0};
    CHECK(spectral_response(h, 2.0) == 17.0);             // 1 + 4 + 12
    CHECK(spectral_response_derivative(h, 2.0) == 14.0);  // 2 + 12
}

TEST_CASE("vertex and spectral filtering agree") {
    const Graph g = random_graph(12, 3);
    const auto eig = jacobi_eigh(g.shift);
    Rng rng(9);
    std::vector<double> h(6);
    for (double& c : h) c = rng.uniform(-1.0, 1.0);

    // i-th GFT coefficient of the filtered eigenvector is h(lambda_i).
    for (std::size_t i = 0; i < 12; ++i) {
        std::vector<double> vi(12);
        for (std::size_t r = 0; r < 12; ++r) vi[r] = eig.eigenvectors(r, i);
        const auto filtered = filter_apply(h, g.shift, vi);
        const auto coeffs = gft(eig.eigenvectors, filtered);
        CHECK(std::abs(coeffs[i] - spectral_response(h, eig.eigenvalues[i])) <= 1e-9);
    }

    std::vector<double> x(12);
    for (double& v : x) v = rng.normal();
    const auto vertex = filter_apply(h, g.shift, x);
    const auto spectral = spectral_filter_oracle(h, eig, x);
    CHECK(max_abs_diff(vertex, spectral) <= 1e-8 * norm2(x));
}

TEST_CASE("gnn_forward zero signal yields the readout bias") {
    const Graph g = random_graph(8, 5);
    const ModelParams params = init_params(2, 3, 2, 8, 4, 11);
    const std::vector<double> zero(8, 0.0);
    const auto [output, trace] = gnn_forward(params, g.shift, zero);
    CHECK(output == params.readout_bias);
    for (double v : trace.features) CHECK(v == 0.0);
}

TEST_CASE("gnn_forward identity filter with identity readout is the identity on positives") {
    const Graph g = random_graph(6, 7);
    ModelParams params;
    params.bank = FilterBank::zeros(1, 1, 2);
    params.bank.taps(0, 0, 0)[0] = 1.0;
    params.readout_weight = DenseMatrix::identity(6);
    params.readout_bias.assign(6, 0.0);
    const std::vector<double> x{0.5, 1.0, 0.0, 2.0, 3.5, 0.25};  // non-negative: ReLU inactive
    const auto [output, trace] = gnn_forward(params, g.shift, x);
    CHECK(output == x);
}

TEST_CASE("gnn_forward matches the spectral-domain oracle through both layers") {
    const Graph g = random_graph(10, 15);
    const auto eig = jacobi_eigh(g.shift);
    Rng rng(21);
    const FilterBank bank = random_bank(2, 3, 4, rng);
    std::vector<double> x(10);
    for (double& v : x) v = rng.normal();

    // Oracle: per layer, u^f = sum_g V H^{fg}(Lambda) V^T x^g, then ReLU.
    std::vector<std::vector<double>> current{x};
    for (std::size_t l = 0; l < 2; ++l) {
        std::vector<std::vector<double>> next;
        for (std::size_t f = 0; f < 3; ++f) {
            std::vector<double> u(10, 0.0);
            for (std::size_t gidx = 0; gidx < bank.in_features(l); ++gidx) {
                const auto part = spectral_filter_oracle(bank.taps(l, f, gidx), eig, current[gidx]);
                axpy(1.0, part, u);
            }
            for (double& v : u) v = v > 0.0 ? v : 0.0;
            next.push_back(std::move(u));
        }
        current = std::move(next);
    }

    const ForwardTrace trace = trunk_forward(bank, g.shift, x);
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(std::abs(trace.features[f * 10 + i] - current[f][i]) <= 1e-8);
}

TEST_CASE("spectral_outputs identity and two-feature hand case") {
    FilterBank identity = FilterBank::zeros(1, 1, 3);
    identity.taps(0, 0, 0)[0] = 1.0;
    const std::vector<double> eigs{-0.5, 0.1, 0.9};
    const SpectralOutputs so = spectral_outputs(identity, eigs);
    for (double z : so.z[0]) CHECK(z == 1.0);

    // F = 2, single input feature: h1 = (0, 1) evaluates to lambda, h2 = (0.5).
    FilterBank two = FilterBank::zeros(1, 2, 1);
    two.taps(0, 0, 0)[1] = 1.0;
    two.taps(0, 1, 0)[0] = 0.5;
    const SpectralOutputs st = spectral_outputs(two, std::vector<double>{0.3});
    CHECK(st.z[0][0] == 0.5);  // max(0.3, 0.5)
    CHECK(st.best_feature[0][0] == 1);
    CHECK(st.best_index[0] == 0);
}

TEST_CASE("spectral_outputs ties go to the lowest index") {
    FilterBank b = FilterBank::zeros(1, 2, 0);
    b.taps(0, 0, 0)[0] = 0.7;
    b.taps(0, 1, 0)[0] = 0.7;  // tie on every eigenvalue
    const SpectralOutputs so = spectral_outputs(b, std::vector<double>{0.2, 0.4});
    CHECK(so.best_feature[0][0] == 0);
    CHECK(so.best_index[0] == 0);  // constant z ties on i as well
}

TEST_CASE("spectral_outputs agrees with the eigenvector route") {
    const Graph g = random_graph(9, 23);
    const auto eig = jacobi_eigh(g.shift);
    Rng rng(33);
    const FilterBank bank = random_bank(2, 3, 5, rng);

    const SpectralOutputs direct = spectral_outputs(bank, eig.eigenvalues);
    const auto literal = spectral_outputs_via_eigenvectors(bank, g.shift, eig.eigenvectors);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < 9; ++i)
            CHECK(std::abs(direct.z[l][i] - literal[l][i]) <= 1e-9);

    // Sign flips of the basis leave the quadratic form unchanged.
    DenseMatrix flipped = eig.eigenvectors;
    for (std::size_t r = 0; r < 9; ++r) flipped(r, 2) = -flipped(r, 2);
    const auto flipped_z = spectral_outputs_via_eigenvectors(bank, g.shift, flipped);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < 9; ++i)
            CHECK(std::abs(flipped_z[l][i] - literal[l][i]) <= 1e-12);
}

TEST_CASE("spectral_outputs_via_eigenvectors rejects a non-orthonormal basis") {
    const Graph g = random_graph(5, 29);
    const FilterBank bank = FilterBank::zeros(1, 1, 1);
    DenseMatrix bad = DenseMatrix::identity(5);
    bad(0, 0) = 2.0;
    CHECK_THROWS_AS(spectral_outputs_via_eigenvectors(bank, g.shift, bad), NumericError);
}

TEST_CASE("trunk is permutation equivariant and spectral outputs are invariant") {
    const Graph g = random_graph(11, 37);
    Rng rng(41);
    const FilterBank bank = random_bank(2, 4, 3, rng);
    std::vector<double> x(11);
    for (double& v : x) v = rng.normal();

    for (int rep = 0; rep < 5; ++rep) {
        const PermutationMap p = PermutationMap::random(11, rng);
        const DenseMatrix sp = permute_graph(g.shift, p);
        const auto xp = permute_signal(x, p);

        const ForwardTrace base = trunk_forward(bank, g.shift, x);
        const ForwardTrace permuted = trunk_forward(bank, sp, xp);
        for (std::size_t f = 0; f < 4; ++f) {
            std::vector<double> feat(11), featp(11);
            for (std::size_t i = 0; i < 11; ++i) {
                feat[i] = base.features[f * 11 + i];
                featp[i] = permuted.features[f * 11 + i];
            }
            CHECK(max_abs_diff(permute_signal(feat, p), featp) <= 1e-9);
        }

        const auto z1 = spectral_outputs(bank, jacobi_eigh(g.shift).eigenvalues);
        const auto z2 = spectral_outputs(bank, jacobi_eigh(sp).eigenvalues);
        for (std::size_t l = 0; l < 2; ++l)
            CHECK(max_abs_diff(z1.z[l], z2.z[l]) <= 1e-9);
    }
}

TEST_CASE("estimate_response_constants") {
    const ResponseConstants lin = estimate_response_constants(std::vector<double>{0.0, 1.0}, 101);
    CHECK(lin.bound == doctest::Approx(1.0));
    CHECK(lin.lipschitz == doctest::Approx(1.0));

    const ResponseConstants flat = estimate_response_constants(std::vector<double>{1.0}, 11);
    CHECK(flat.bound == 1.0);
    CHECK(flat.lipschitz == 0.0);

    // h = lambda^2: |h| peaks at 1 on the endpoints, |h'| = 2|lambda| peaks at 2.
    const ResponseConstants quad =
        estimate_response_constants(std::vector<double>{0.0, 0.0, 1.0}, 101);
    CHECK(quad.bound == doctest::Approx(1.0));
    CHECK(quad.lipschitz == doctest::Approx(2.0));

    CHECK_THROWS_AS(estimate_response_constants(std::vector<double>{1.0}, 1), ConfigError);
}

TEST_CASE("stability_constant") {
    CHECK(stability_constant(1, 1, 1, 1.0, 1.0) == doctest::Approx(9.0));
    // Monotone in each argument.
    const double base = stability_constant(50, 2, 32, 0.5, 1.1);
    CHECK(stability_constant(51, 2, 32, 0.5, 1.1) > base);
    CHECK(stability_constant(50, 2, 33, 0.5, 1.1) > base);
    CHECK(stability_constant(50, 2, 32, 0.6, 1.1) > base);
    CHECK(stability_constant(50, 2, 32, 0.5, 1.2) > base);
}

TEST_CASE("single-filter deviation scales first-order in eps") {
    const Graph g = random_graph(14, 51);
    Rng rng(53);
    std::vector<double> h(6);
    for (double& c : h) c = rng.uniform(-0.5, 0.5);
    std::vector<double> x(14);
    for (double& v : x) v = rng.normal();
    const auto base = filter_apply(h, g.shift, x);

    auto deviation = [&](double eps) {
        // Same seed: the same direction rescaled, so the scaling in eps is clean.
        const DenseMatrix sp = perturb(g.shift, eps, PerturbMode::Dense, 777);
        const auto out = filter_apply(h, sp, x);
        std::vector<double> diff = out;
        axpy(-1.0, base, diff);
        return norm2(diff);
    };

    const ResponseConstants rc = estimate_response_constants(h, 2001);
    for (double eps : {1e-4, 1e-3}) {
        const double dev = deviation(eps);
        const double bound = stability_constant(14, 1, 1, rc.lipschitz, rc.bound) * norm2(x) * eps;
        CHECK(dev <= 10.0 * bound);
        const double ratio = deviation(2.0 * eps) / dev;
        CHECK(ratio >= 1.0);
        CHECK(ratio <= 4.0);
        // Within a factor 1.5 of linear across the decade.
        const double decade = deviation(10.0 * eps) / dev;
        CHECK(decade >= 10.0 / 1.5);
        CHECK(decade <= 10.0 * 1.5);
    }
}

TEST_CASE("checkpoint round trip is bit-faithful") {
    const ModelParams params = init_params(2, 3, 4, 7, 5, 61);
    const auto path = std::filesystem::temp_directory_path() / "specgnn_checkpoint.json";
    save_checkpoint(path, params, 7);
    std::size_t n = 0;
    const ModelParams back = load_checkpoint(path, &n);
    CHECK(n == 7);
    CHECK(back.bank.coeffs == params.bank.coeffs);
    CHECK(back.readout_weight == params.readout_weight);
    CHECK(back.readout_bias == params.readout_bias);
    std::filesystem::remove(path);
}
