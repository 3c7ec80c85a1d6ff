#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "samlab/data.hpp"
#include "samlab/error.hpp"
#include "samlab/rng.hpp"

namespace samlab {

/// Analytic 1-D fixture with one sharp and one flat basin, blended smoothly.
/// The sharp basin is the global minimum (lower by `flat_offset`), so plain
/// descent prefers it while a flat-seeking method should not.
struct TwoBasinLoss {
    double sharp_curvature = 50.0;
    double sharp_center = -1.0;
    double flat_curvature = 1.0;
    double flat_center = 2.0;
    double flat_offset = 0.05;
    double temperature = 0.1;

    double sharp(double x) const { return 0.5 * sharp_curvature * (x - sharp_center) * (x - sharp_center); }
    double flat(double x) const {
        return 0.5 * flat_curvature * (x - flat_center) * (x - flat_center) + flat_offset;
    }

    /// Softmin blend: -T log(exp(-Ls/T) + exp(-Lf/T)), evaluated stably.
    double operator()(double x) const {
        double ls = sharp(x), lf = flat(x);
        double lo = std::min(ls, lf), hi = std::max(ls, lf);
        return lo - temperature * std::log1p(std::exp(-(hi - lo) / temperature));
    }

    double grad(double x) const {
        double ls = sharp(x), lf = flat(x);
        // Softmin weights, computed from the stable difference.
        double ws, wf;
        if (ls <= lf) {
            double e = std::exp(-(lf - ls) / temperature);
            ws = 1.0 / (1.0 + e);
            wf = e / (1.0 + e);
        } else {
            double e = std::exp(-(ls - lf) / temperature);
            ws = e / (1.0 + e);
            wf = 1.0 / (1.0 + e);
        }
        double gs = sharp_curvature * (x - sharp_center);
        double gf = flat_curvature * (x - flat_center);
        return ws * gs + wf * gf;
    }

    /// Boundary between the basins: where the two branch losses cross,
    /// between the centers.
    double ridge() const {
        double lo = sharp_center, hi = flat_center;
        for (int i = 0; i < 200; ++i) {
            double mid = 0.5 * (lo + hi);
            (sharp(mid) < flat(mid) ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    bool in_flat_basin(double x) const { return x > ridge(); }
};

inline TwoBasinLoss gen_two_basin_1d() { return TwoBasinLoss{}; }

namespace detail {

inline std::string descriptor_string(const char* task, const std::string& args, Split split) {
    return std::string(task) + "(" + args + ")/" + split_name(split);
}

}  // namespace detail

/// Two interleaved Archimedean spirals with Gaussian coordinate noise.
/// Point k of class 1 is the exact pi-rotation of point k of class 0 before
/// noise. Train and test splits use distinct angle offsets and noise
/// streams, so they never coincide.
inline Dataset gen_spirals(int n_per_class, double noise_sigma, uint64_t seed,
                           Split split = Split::train) {
    if (n_per_class < 1) throw ValidationError("gen_spirals: n_per_class must be >= 1");
    if (noise_sigma < 0.0) throw ValidationError("gen_spirals: noise_sigma must be >= 0");
    const double full_turn = 3.0 * std::numbers::pi;
    CounterRng noise = CounterRng::keyed(seed, fnv1a64("spirals_noise"), static_cast<uint64_t>(split));

    int n = 2 * n_per_class;
    Tensor features = Tensor::zeros({n, 2});
    std::vector<int> labels(static_cast<size_t>(n));
    for (int k = 0; k < n_per_class; ++k) {
        double frac = n_per_class == 1 ? 0.0 : static_cast<double>(k) / (n_per_class - 1);
        if (split == Split::test) frac = (k + 0.5) / n_per_class;  // offset grid, disjoint from train
        double theta = full_turn * frac;
        double radius = theta / full_turn;
        double x = radius * std::cos(theta);
        double y = radius * std::sin(theta);
        features.at(k, 0) = x + noise_sigma * noise.next_normal();
        features.at(k, 1) = y + noise_sigma * noise.next_normal();
        labels[static_cast<size_t>(k)] = 0;
        int k1 = n_per_class + k;
        features.at(k1, 0) = -x + noise_sigma * noise.next_normal();
        features.at(k1, 1) = -y + noise_sigma * noise.next_normal();
        labels[static_cast<size_t>(k1)] = 1;
    }
    Dataset ds;
    ds.data.features = std::move(features);
    ds.data.labels = std::move(labels);
    ds.split = split;
    ds.gen_seed = seed;
    char args[96];
    std::snprintf(args, sizeof args, "n_per_class=%d,noise=%g,seed=%llu", n_per_class, noise_sigma,
                  static_cast<unsigned long long>(seed));
    ds.descriptor = detail::descriptor_string("spirals", args, split);
    return ds;
}

/// Key-value lookup sequences: (seq_len-1)/2 pairs followed by a query key;
/// the label is the value paired with the query. Keys are distinct within an
/// example; values are uniform over the vocabulary, so blind guessing scores
/// about 1/vocab. The test split rejects any sequence that collides with a
/// train sequence, keeping the splits disjoint.
inline Dataset gen_seq_lookup(int n, int vocab, int seq_len, uint64_t seed,
                              Split split = Split::train) {
    if (n < 1) throw ValidationError("gen_seq_lookup: n must be >= 1");
    if (vocab < 4) throw ValidationError("gen_seq_lookup: vocab must be >= 4");
    if (seq_len < 3 || seq_len % 2 == 0)
        throw ValidationError("gen_seq_lookup: seq_len must be odd and >= 3");
    int pairs = (seq_len - 1) / 2;
    if (pairs > vocab)
        throw ValidationError("gen_seq_lookup: need seq_len/2 distinct keys within the vocab");

    // Exact-sequence hashes of the train split, for test-split rejection.
    std::unordered_set<uint64_t> train_rows;
    auto row_hash = [seq_len](const int* row) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (int i = 0; i < seq_len; ++i) {
            h ^= static_cast<uint64_t>(row[i]);
            h *= 0x100000001b3ULL;
        }
        return h;
    };

    auto generate = [&](Split s, std::vector<int>& tokens, std::vector<int>& labels) {
        CounterRng rng = CounterRng::keyed(seed, fnv1a64("seq_lookup"), static_cast<uint64_t>(s));
        std::vector<int> keys(static_cast<size_t>(vocab));
        std::vector<int> row(static_cast<size_t>(seq_len));
        int made = 0;
        while (made < n) {
            for (int i = 0; i < vocab; ++i) keys[static_cast<size_t>(i)] = i;
            for (int i = 0; i < pairs; ++i) {
                int j = i + static_cast<int>(rng.next_below(vocab - i));
                std::swap(keys[static_cast<size_t>(i)], keys[static_cast<size_t>(j)]);
            }
            for (int i = 0; i < pairs; ++i) {
                row[static_cast<size_t>(2 * i)] = keys[static_cast<size_t>(i)];
                row[static_cast<size_t>(2 * i + 1)] = static_cast<int>(rng.next_below(vocab));
            }
            int query = static_cast<int>(rng.next_below(pairs));
            row[static_cast<size_t>(seq_len - 1)] = keys[static_cast<size_t>(query)];
            if (s == Split::test && train_rows.count(row_hash(row.data()))) continue;
            tokens.insert(tokens.end(), row.begin(), row.end());
            labels.push_back(row[static_cast<size_t>(2 * query + 1)]);
            if (s == Split::train) train_rows.insert(row_hash(row.data()));
            ++made;
        }
    };

    Dataset ds;
    ds.data.seq_len = seq_len;
    if (split == Split::test) {
        // Reproduce the train rows first so rejection sees the same set.
        std::vector<int> tmp_tokens;
        std::vector<int> tmp_labels;
        generate(Split::train, tmp_tokens, tmp_labels);
    }
    generate(split, ds.data.tokens, ds.data.labels);
    ds.split = split;
    ds.gen_seed = seed;
    char args[96];
    std::snprintf(args, sizeof args, "n=%d,vocab=%d,seq_len=%d,seed=%llu", n, vocab, seq_len,
                  static_cast<unsigned long long>(seed));
    ds.descriptor = detail::descriptor_string("seq_lookup", args, split);
    return ds;
}

struct SubsampleSpec {
    double rate = 1.0;
    uint64_t seed = 0;
};

/// Uniform without-replacement subsample of a train split, keeping
/// max(1, floor(rate * n)) examples. Selection orders examples by a
/// per-example hash of (seed, index) and keeps the prefix, so a smaller rate
/// always selects a subset of a larger one under the same seed. The kept
/// examples stay in their original relative order.
inline Dataset subsample(const Dataset& dataset, const SubsampleSpec& spec) {
    if (dataset.split != Split::train)
        throw ValidationError("subsample: only train splits may be subsampled");
    if (!(spec.rate > 0.0) || spec.rate > 1.0)
        throw ValidationError("subsample: rate must lie in (0, 1]");
    int n = dataset.size();
    int keep = std::max(1, static_cast<int>(std::floor(spec.rate * n)));

    std::vector<std::pair<uint64_t, int>> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        order[static_cast<size_t>(i)] = {
            split_mix64(split_mix64(spec.seed) ^ static_cast<uint64_t>(i)), i};
    std::sort(order.begin(), order.end());
    std::vector<int> idx(static_cast<size_t>(keep));
    for (int i = 0; i < keep; ++i) idx[static_cast<size_t>(i)] = order[static_cast<size_t>(i)].second;
    std::sort(idx.begin(), idx.end());

    Dataset out;
    out.data = dataset.data.subset(idx);
    out.split = dataset.split;
    out.gen_seed = dataset.gen_seed;
    char args[64];
    std::snprintf(args, sizeof args, "%g@%llu", spec.rate, static_cast<unsigned long long>(spec.seed));
    out.descriptor = dataset.descriptor + "/subsample(" + args + ")";
    return out;
}

}  // namespace samlab
