#pragma once

#include <span>
#include <string>
#include <vector>

#include "samlab/error.hpp"
#include "samlab/tensor.hpp"

namespace samlab {

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

/// A set of examples. Real-feature tasks fill `features` (n x d); token tasks
/// fill `tokens` (n x seq_len, row-major) and set seq_len > 0. `labels` has
/// one class id per example in both cases.
struct Batch {
    Tensor features;
    std::vector<int> tokens;
    int seq_len = 0;
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
    bool token_task() const { return seq_len > 0; }

    Batch subset(std::span<const int> idx) const {
        Batch out;
        out.seq_len = seq_len;
        out.labels.reserve(idx.size());
        for (int i : idx) {
            if (i < 0 || i >= size()) throw UsageError("batch subset index out of range");
            out.labels.push_back(labels[static_cast<size_t>(i)]);
        }
        if (token_task()) {
            out.tokens.reserve(idx.size() * static_cast<size_t>(seq_len));
            for (int i : idx) {
                auto first = tokens.begin() + static_cast<std::ptrdiff_t>(i) * seq_len;
                out.tokens.insert(out.tokens.end(), first, first + seq_len);
            }
        } else if (features.numel() > 0) {
            long long d = features.cols();
            std::vector<double> rows;
            rows.reserve(idx.size() * static_cast<size_t>(d));
            for (int i : idx) {
                auto first = features.data.begin() + static_cast<std::ptrdiff_t>(i) * d;
                rows.insert(rows.end(), first, first + d);
            }
            out.features = Tensor({static_cast<long long>(idx.size()), d}, std::move(rows));
        }
        return out;
    }

    /// Contiguous [begin, end) slice.
    Batch slice(int begin, int end) const {
        std::vector<int> idx;
        idx.reserve(static_cast<size_t>(end - begin));
        for (int i = begin; i < end; ++i) idx.push_back(i);
        return subset(idx);
    }
};

/// Ascent micro-batch: the selected examples plus their indices into the
/// parent batch (ascending).
struct MicroBatch {
    std::vector<int> indices;
    Batch examples;
};

struct Dataset {
    Batch data;
    Split split = Split::train;
    uint64_t gen_seed = 0;
    std::string descriptor;

    int size() const { return data.size(); }
};

}  // namespace samlab
