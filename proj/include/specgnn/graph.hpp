#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "specgnn/linalg.hpp"

namespace specgnn {

enum class GraphKind { RawAdjacency, NormalizedAdjacency, Similarity };

inline const char* to_string(GraphKind k) {
    switch (k) {
        case GraphKind::RawAdjacency: return "raw-adjacency";
        case GraphKind::NormalizedAdjacency: return "normalized-adjacency";
        case GraphKind::Similarity: return "similarity";
    }
    return "?";
}

inline GraphKind graph_kind_from_string(const std::string& s) {
    if (s == "raw-adjacency") return GraphKind::RawAdjacency;
    if (s == "normalized-adjacency") return GraphKind::NormalizedAdjacency;
    if (s == "similarity") return GraphKind::Similarity;
    throw DataError("unknown graph kind: " + s);
}

// A graph represented by its symmetric shift operator, with optional
// community labels carried along for dataset generation.
struct Graph {
    DenseMatrix shift;
    GraphKind kind = GraphKind::RawAdjacency;
    std::vector<int> communities;  // empty when absent

    std::size_t n() const { return shift.rows(); }
};

// Node relabeling: node i moves to position map[i].
struct PermutationMap {
    std::vector<std::size_t> map;

    static PermutationMap identity(std::size_t n) {
        PermutationMap p;
        p.map.resize(n);
        for (std::size_t i = 0; i < n; ++i) p.map[i] = i;
        return p;
    }

    static PermutationMap random(std::size_t n, Rng& rng) {
        PermutationMap p = identity(n);
        rng.shuffle(p.map);
        return p;
    }

    PermutationMap inverse() const {
        PermutationMap p;
        p.map.resize(map.size());
        for (std::size_t i = 0; i < map.size(); ++i) p.map[map[i]] = i;
        return p;
    }

    void validate(std::size_t n) const {
        if (map.size() != n) throw ConfigError("permutation: wrong length");
        std::vector<char> seen(n, 0);
        for (std::size_t v : map) {
            if (v >= n || seen[v]) throw ConfigError("permutation: mapping is not a bijection");
            seen[v] = 1;
        }
    }
};

inline bool is_connected(const DenseMatrix& adj) {
    const std::size_t n = adj.rows();
    if (n == 0) return false;
    std::vector<char> seen(n, 0);
    std::deque<std::size_t> queue{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n; ++v) {
            if (!seen[v] && adj(u, v) != 0.0) {
                seen[v] = 1;
                ++count;
                queue.push_back(v);
            }
        }
    }
    return count == n;
}

// Stochastic block model with equal-size contiguous communities. Within-block
// edges appear with p_intra, cross-block with p_inter. Disconnected draws are
// rejected and redrawn, up to 20 attempts.
inline Graph sbm_generate(std::size_t n, std::size_t c, double p_intra, double p_inter,
                          std::uint64_t seed) {
    if (n == 0 || c == 0 || n % c != 0)
        throw ConfigError("sbm_generate: community count must divide node count");
    if (p_intra < 0.0 || p_intra > 1.0 || p_inter < 0.0 || p_inter > 1.0)
        throw ConfigError("sbm_generate: probabilities must lie in [0, 1]");

    const std::size_t block = n / c;
    Graph g;
    g.kind = GraphKind::RawAdjacency;
    g.communities.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.communities[i] = static_cast<int>(i / block);

    Rng rng(seed);
    constexpr int kMaxAttempts = 20;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        DenseMatrix a(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double p = g.communities[i] == g.communities[j] ? p_intra : p_inter;
                if (rng.uniform() < p) a(i, j) = a(j, i) = 1.0;
            }
        }
        if (n == 1 || is_connected(a)) {
            g.shift = std::move(a);
            return g;
        }
    }
    throw DataError("sbm_generate: 20 consecutive draws were disconnected");
}

// S = A / max|eigenvalue(A)|, so the spectrum lies in [-1, 1].
inline Graph normalize_shift(const DenseMatrix& a) {
    if (!a.square()) throw DimensionError("normalize_shift: matrix must be square");
    if (a.symmetry_gap() > kSymmetryTol) throw NumericError("normalize_shift: input asymmetric");
    for (double v : a.values())
        if (v < 0.0) throw ConfigError("normalize_shift: entries must be non-negative");
    const double norm = operator_norm(a);
    if (norm == 0.0) throw NumericError("normalize_shift: zero matrix is degenerate");
    Graph g;
    g.kind = GraphKind::NormalizedAdjacency;
    g.shift = a;
    scale_inplace(g.shift.values(), 1.0 / norm);
    return g;
}

inline Graph normalize_shift(const Graph& g) {
    Graph out = normalize_shift(g.shift);
    out.communities = g.communities;
    return out;
}

enum class PerturbMode { Dense, EdgesOnly };

inline const char* to_string(PerturbMode m) {
    return m == PerturbMode::Dense ? "dense" : "edges-only";
}

inline PerturbMode perturb_mode_from_string(const std::string& s) {
    if (s == "dense") return PerturbMode::Dense;
    if (s == "edges-only") return PerturbMode::EdgesOnly;
    throw ConfigError("unknown perturbation mode: " + s);
}

// S + E with E symmetric Gaussian rescaled so its operator norm equals eps
// exactly (up to the norm estimator's tolerance). edges-only restricts E to
// the support of S (edges plus diagonal) before rescaling.
inline DenseMatrix perturb(const DenseMatrix& s, double eps, PerturbMode mode,
                           std::uint64_t seed) {
    if (!s.square()) throw DimensionError("perturb: matrix must be square");
    if (eps < 0.0) throw ConfigError("perturb: negative perturbation size");
    const std::size_t n = s.rows();
    if (mode == PerturbMode::EdgesOnly) {
        bool has_edge = false;
        for (std::size_t i = 0; i < n && !has_edge; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (s(i, j) != 0.0) {
                    has_edge = true;
                    break;
                }
        if (!has_edge) throw NumericError("perturb: edges-only mode on an edgeless graph");
    }
    if (eps == 0.0) return s;

    Rng rng(seed);
    DenseMatrix e(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) e(i, j) = e(j, i) = rng.normal();
    if (mode == PerturbMode::EdgesOnly) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j && s(i, j) == 0.0) e(i, j) = 0.0;
    }
    const double norm = operator_norm(e);
    if (norm == 0.0) throw NumericError("perturb: degenerate zero perturbation draw");
    scale_inplace(e.values(), eps / norm);

    DenseMatrix out = s;
    for (std::size_t i = 0; i < n * n; ++i) out.values()[i] += e.values()[i];
    return out;
}

// P^T S P realized by index relabeling; P itself is never formed.
inline DenseMatrix permute_graph(const DenseMatrix& s, const PermutationMap& p) {
    if (!s.square()) throw DimensionError("permute_graph: matrix must be square");
    p.validate(s.rows());
    const std::size_t n = s.rows();
    DenseMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(p.map[i], p.map[j]) = s(i, j);
    return out;
}

inline std::vector<double> permute_signal(std::span<const double> x, const PermutationMap& p) {
    p.validate(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[p.map[i]] = x[i];
    return out;
}

// Keep each node's k strongest positive similarities (ties to the lower
// neighbor index), symmetrize by union, then normalize the spectrum.
inline Graph knn_sparsify(const DenseMatrix& w, std::size_t k) {
    if (!w.square()) throw DimensionError("knn_sparsify: matrix must be square");
    const std::size_t n = w.rows();
    if (k == 0 || k >= n) throw ConfigError("knn_sparsify: need 1 <= k < n");
    if (w.symmetry_gap() > kSymmetryTol) throw NumericError("knn_sparsify: input asymmetric");
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(w(i, i)) > kSymmetryTol)
            throw ConfigError("knn_sparsify: diagonal must be zero");

    std::vector<std::vector<char>> keep(n, std::vector<char>(n, 0));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
        idx.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) idx.push_back(j);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (w(i, a) != w(i, b)) return w(i, a) > w(i, b);
            return a < b;
        });
        for (std::size_t r = 0; r < k; ++r) keep[i][idx[r]] = 1;
    }

    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if ((keep[i][j] || keep[j][i]) && w(i, j) > 0.0) m(i, j) = m(j, i) = w(i, j);
    return normalize_shift(m);
}

// Textual graph format: header "n kind", then one "i j w" line per nonzero
// upper-triangle entry with 17-significant-digit weights.
inline void save_graph(const std::filesystem::path& path, const Graph& g) {
    std::ofstream out(path);
    if (!out) throw DataError("save_graph: cannot open " + path.string());
    const std::size_t n = g.n();
    out << n << ' ' << to_string(g.kind) << '\n';
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j)
            if (g.shift(i, j) != 0.0)
                out << i << ' ' << j << ' ' << fmt_g17(g.shift(i, j)) << '\n';
    if (!out) throw DataError("save_graph: write failed for " + path.string());
}

inline Graph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_graph: cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw DataError("load_graph: missing header");
    std::istringstream hs(header);
    std::size_t n = 0;
    std::string kind;
    if (!(hs >> n >> kind)) throw DataError("load_graph: malformed header");
    Graph g;
    g.kind = graph_kind_from_string(kind);
    g.shift = DenseMatrix(n, n);
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t i = 0, j = 0;
        double w = 0.0;
        if (!(ls >> i >> j >> w) || i >= n || j >= n || j < i)
            throw DataError("load_graph: malformed entry at line " + std::to_string(lineno));
        g.shift(i, j) = g.shift(j, i) = w;
    }
    return g;
}

}  // namespace specgnn
