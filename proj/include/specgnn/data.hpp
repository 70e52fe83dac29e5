#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "specgnn/graph.hpp"

namespace specgnn {

enum class TaskKind { Classification, Regression };

// One (signal, label) pair. For regression the label is the rating of the
// node at target_index, which is zeroed in x; classification uses
// target_index = -1 and an integer-valued y.
struct Sample {
    std::vector<double> x;
    double y = 0.0;
    int target_index = -1;

    int label() const { return static_cast<int>(y); }
};

struct Dataset {
    std::vector<Sample> samples;
    TaskKind task = TaskKind::Classification;
    std::size_t n = 0;
    std::size_t classes = 0;  // classification only

    std::size_t size() const { return samples.size(); }
};

struct DatasetTriple {
    Dataset train, valid, test;
};

struct SplitSizes {
    std::size_t train = 0, valid = 0, test = 0;
};

// ---------------------------------------------------------------------------
// Source localization: classify which community seeded a diffused signal.

struct SourceLocalizationData {
    DatasetTriple splits;
    std::vector<std::size_t> sources;  // one node per community, fixed per dataset
};

// Each sample draws a source community uniformly, a diffusion time t uniform
// on {0..t_max}, and sets x = S^t delta_source + Gaussian noise. The label is
// the source's community.
inline SourceLocalizationData source_localization_dataset(const Graph& graph, SplitSizes sizes,
                                                          int t_max, double noise_std,
                                                          std::uint64_t seed) {
    if (graph.communities.empty())
        throw DataError("source_localization_dataset: graph has no community metadata");
    if (t_max < 0) throw ConfigError("source_localization_dataset: t_max must be >= 0");
    if (noise_std < 0.0) throw ConfigError("source_localization_dataset: negative noise level");
    if (sizes.train == 0 || sizes.valid == 0 || sizes.test == 0)
        throw ConfigError("source_localization_dataset: split sizes must be positive");

    const std::size_t n = graph.n();
    int c = 0;
    for (int label : graph.communities) c = std::max(c, label + 1);
    std::vector<std::vector<std::size_t>> members(c);
    for (std::size_t i = 0; i < n; ++i) members[graph.communities[i]].push_back(i);

    Rng rng(seed);
    SourceLocalizationData out;
    out.sources.resize(c);
    for (int k = 0; k < c; ++k) {
        if (members[k].empty())
            throw DataError("source_localization_dataset: empty community " + std::to_string(k));
        out.sources[k] = members[k][rng.uniform_index(members[k].size())];
    }

    auto make_sample = [&]() {
        Sample s;
        const std::size_t comm = rng.uniform_index(static_cast<std::size_t>(c));
        const std::size_t t = rng.uniform_index(static_cast<std::size_t>(t_max) + 1);
        std::vector<double> delta(n, 0.0);
        delta[out.sources[comm]] = 1.0;
        s.x = shift_power_apply(graph.shift, t, delta);
        if (noise_std > 0.0)
            for (double& v : s.x) v += noise_std * rng.normal();
        s.y = static_cast<double>(graph.communities[out.sources[comm]]);
        return s;
    };

    auto fill = [&](Dataset& d, std::size_t count) {
        d.task = TaskKind::Classification;
        d.n = n;
        d.classes = static_cast<std::size_t>(c);
        d.samples.reserve(count);
        for (std::size_t i = 0; i < count; ++i) d.samples.push_back(make_sample());
    };
    fill(out.splits.train, sizes.train);
    fill(out.splits.valid, sizes.valid);
    fill(out.splits.test, sizes.test);
    return out;
}

// ---------------------------------------------------------------------------
// MovieLens-100k ingestion and the movie similarity graph.

struct RatingRecord {
    int user = 0;
    int movie = 0;
    int rating = 0;
    long long timestamp = 0;
};

struct RatingsTable {
    std::vector<RatingRecord> records;  // deduplicated; last record wins
    std::size_t user_count = 0;         // distinct users
    std::size_t movie_count = 0;        // distinct movies
    std::unordered_map<int, std::size_t> ratings_per_movie;
    std::size_t duplicate_count = 0;
};

// Parses the u.data wire format: tab-separated "user item rating timestamp"
// lines, ratings in {1..5}.
inline RatingsTable load_movielens(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_movielens: cannot open " + path.string());

    RatingsTable table;
    std::map<std::pair<int, int>, std::size_t> position;  // (user, movie) -> record index
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 4> field;
        std::size_t start = 0, nf = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                if (nf >= 4) {
                    nf = 5;
                    break;
                }
                field[nf++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (nf != 4)
            throw DataError("load_movielens: line " + std::to_string(lineno) +
                            ": expected 4 tab-separated fields");
        RatingRecord r;
        try {
            r.user = std::stoi(field[0]);
            r.movie = std::stoi(field[1]);
            r.rating = std::stoi(field[2]);
            r.timestamp = std::stoll(field[3]);
        } catch (const std::exception&) {
            throw DataError("load_movielens: line " + std::to_string(lineno) + ": malformed field");
        }
        if (r.rating < 1 || r.rating > 5)
            throw DataError("load_movielens: line " + std::to_string(lineno) +
                            ": rating out of range 1..5");
        const auto key = std::make_pair(r.user, r.movie);
        auto it = position.find(key);
        if (it != position.end()) {
            table.records[it->second] = r;  // last record wins
            ++table.duplicate_count;
        } else {
            position.emplace(key, table.records.size());
            table.records.push_back(r);
        }
    }

    std::set<int> users, movies;
    for (const auto& r : table.records) {
        users.insert(r.user);
        movies.insert(r.movie);
        ++table.ratings_per_movie[r.movie];
    }
    table.user_count = users.size();
    table.movie_count = movies.size();
    return table;
}

// The n most-rated movies, ties broken by lower id.
inline std::vector<int> most_rated_movies(const RatingsTable& table, std::size_t n) {
    std::vector<std::pair<int, std::size_t>> counted(table.ratings_per_movie.begin(),
                                                     table.ratings_per_movie.end());
    if (counted.size() < n)
        throw DataError("most_rated_movies: only " + std::to_string(counted.size()) +
                        " movies have ratings, need " + std::to_string(n));
    std::sort(counted.begin(), counted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = counted[i].first;
    return ids;
}

// Pearson correlation between movie columns, computed per pair over the users
// who rated both, with means taken over that co-rating subset. Pairs with
// fewer than 2 co-raters (or zero variance) get similarity 0. Unit diagonal.
inline DenseMatrix movie_similarity(const RatingsTable& table, std::span<const int> movie_ids) {
    const std::size_t n = movie_ids.size();
    std::unordered_map<int, std::size_t> node_of;
    for (std::size_t i = 0; i < n; ++i) node_of[movie_ids[i]] = i;

    std::vector<std::map<int, double>> ratings(n);  // per node: user -> rating
    for (const auto& r : table.records) {
        auto it = node_of.find(r.movie);
        if (it != node_of.end()) ratings[it->second][r.user] = static_cast<double>(r.rating);
    }

    DenseMatrix w(n, n);
    for (std::size_t i = 0; i < n; ++i) w(i, i) = 1.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const auto& small = ratings[a].size() <= ratings[b].size() ? ratings[a] : ratings[b];
            const auto& large = ratings[a].size() <= ratings[b].size() ? ratings[b] : ratings[a];
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            std::size_t cnt = 0;
            for (const auto& [user, x] : small) {
                auto it = large.find(user);
                if (it == large.end()) continue;
                const double y = it->second;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                ++cnt;
            }
            double sim = 0.0;
            if (cnt >= 2) {
                const double num = sxy - sx * sy / static_cast<double>(cnt);
                const double dx = sxx - sx * sx / static_cast<double>(cnt);
                const double dy = syy - sy * sy / static_cast<double>(cnt);
                if (dx > 0.0 && dy > 0.0) sim = num / std::sqrt(dx * dy);
            }
            w(a, b) = w(b, a) = sim;
        }
    }
    return w;
}

struct MovieGraph {
    Graph graph;
    std::vector<int> movie_ids;  // movie_ids[node] = MovieLens id
};

// Most-rated movie selection, pairwise Pearson similarity (negatives clipped
// to zero), k-nearest-neighbor sparsification, spectral normalization.
inline MovieGraph build_movie_graph(const RatingsTable& table, std::size_t n_movies,
                                    std::size_t k) {
    if (n_movies > table.movie_count)
        throw DataError("build_movie_graph: catalog has fewer movies than requested");
    MovieGraph out;
    out.movie_ids = most_rated_movies(table, n_movies);
    DenseMatrix w = movie_similarity(table, out.movie_ids);
    for (std::size_t i = 0; i < n_movies; ++i) {
        w(i, i) = 0.0;
        for (std::size_t j = 0; j < n_movies; ++j)
            if (w(i, j) < 0.0) w(i, j) = 0.0;
    }
    out.graph = knn_sparsify(w, k);
    return out;
}

// One regression sample per user who rated the target movie: x holds the
// user's ratings over the selected movies with the target entry zeroed, y is
// the held-out rating. Users are split into train/valid/test by fraction.
inline DatasetTriple movie_dataset(const RatingsTable& table, std::span<const int> movie_ids,
                                   int target_movie, double frac_train, double frac_valid,
                                   std::uint64_t seed) {
    if (frac_train <= 0.0 || frac_valid < 0.0 || frac_train + frac_valid >= 1.0 + 1e-12)
        throw ConfigError("movie_dataset: invalid split fractions");
    const std::size_t n = movie_ids.size();
    std::unordered_map<int, std::size_t> node_of;
    for (std::size_t i = 0; i < n; ++i) node_of[movie_ids[i]] = i;
    auto target_it = node_of.find(target_movie);
    if (target_it == node_of.end())
        throw ConfigError("movie_dataset: target movie is not among the selected movies");
    const int target_node = static_cast<int>(target_it->second);

    std::map<int, std::map<int, double>> user_ratings;  // user -> node -> rating
    std::map<int, double> target_rating;
    for (const auto& r : table.records) {
        auto it = node_of.find(r.movie);
        if (it == node_of.end()) continue;
        user_ratings[r.user][static_cast<int>(it->second)] = static_cast<double>(r.rating);
        if (r.movie == target_movie) target_rating[r.user] = static_cast<double>(r.rating);
    }
    if (target_rating.empty()) throw DataError("movie_dataset: no user rated the target movie");

    std::vector<int> users;
    users.reserve(target_rating.size());
    for (const auto& [user, _] : target_rating) users.push_back(user);
    Rng rng(seed);
    rng.shuffle(users);

    const std::size_t total = users.size();
    const std::size_t n_train = static_cast<std::size_t>(frac_train * static_cast<double>(total));
    const std::size_t n_valid = static_cast<std::size_t>(frac_valid * static_cast<double>(total));

    auto make_sample = [&](int user) {
        Sample s;
        s.x.assign(n, 0.0);
        for (const auto& [node, rating] : user_ratings[user]) s.x[node] = rating;
        s.x[target_node] = 0.0;
        s.y = target_rating[user];
        s.target_index = target_node;
        return s;
    };

    DatasetTriple out;
    for (Dataset* d : {&out.train, &out.valid, &out.test}) {
        d->task = TaskKind::Regression;
        d->n = n;
    }
    for (std::size_t i = 0; i < total; ++i) {
        Dataset& d = i < n_train ? out.train : (i < n_train + n_valid ? out.valid : out.test);
        d.samples.push_back(make_sample(users[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics.

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
    if (predicted.empty()) throw DimensionError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline double rmse(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size()) throw DimensionError("rmse: length mismatch");
    if (predictions.empty()) throw DimensionError("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
}

// ---------------------------------------------------------------------------
// Dataset text format: one sample per line, "y target_index x_1 ... x_n"
// with 17-significant-digit decimals; target_index -1 marks classification.

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw DataError("save_dataset: cannot open " + path.string());
    for (const Sample& s : d.samples) {
        out << fmt_g17(s.y) << ' ' << s.target_index;
        for (double v : s.x) out << ' ' << fmt_g17(v);
        out << '\n';
    }
    if (!out) throw DataError("save_dataset: write failed for " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_dataset: cannot open " + path.string());
    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Sample s;
        if (!(ls >> s.y >> s.target_index))
            throw DataError("load_dataset: malformed line " + std::to_string(lineno));
        double v;
        while (ls >> v) s.x.push_back(v);
        if (d.samples.empty()) {
            d.n = s.x.size();
            d.task = s.target_index < 0 ? TaskKind::Classification : TaskKind::Regression;
        } else if (s.x.size() != d.n) {
            throw DataError("load_dataset: inconsistent signal length at line " +
                            std::to_string(lineno));
        }
        d.samples.push_back(std::move(s));
    }
    if (d.task == TaskKind::Classification)
        for (const Sample& s : d.samples)
            d.classes = std::max(d.classes, static_cast<std::size_t>(s.label() + 1));
    return d;
}

}  // namespace specgnn
