#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "samlab/data.hpp"
#include "samlab/graph.hpp"
#include "samlab/params.hpp"
#include "samlab/rng.hpp"

namespace samlab {

enum class Activation { relu, tanh };

struct MlpSpec {
    std::vector<int> layer_sizes;  // input -> hidden... -> output
    Activation activation = Activation::relu;
    uint64_t init_seed = 0;

    void validate() const {
        if (layer_sizes.size() < 2)
            throw ValidationError("mlp: need at least an input and an output width");
        for (int w : layer_sizes)
            if (w < 1) throw ValidationError("mlp: layer widths must be >= 1");
    }

    long long param_count() const {
        long long n = 0;
        for (size_t i = 0; i + 1 < layer_sizes.size(); ++i)
            n += static_cast<long long>(layer_sizes[i] + 1) * layer_sizes[i + 1];
        return n;
    }
};

struct TransformerSpec {
    int vocab_size = 16;
    int model_dim = 32;
    int num_heads = 2;
    int ff_dim = 64;
    int max_seq_len = 16;
    uint64_t init_seed = 0;

    void validate() const {
        if (vocab_size < 2) throw ValidationError("transformer: vocab_size must be >= 2");
        if (max_seq_len < 1) throw ValidationError("transformer: max_seq_len must be >= 1");
        if (num_heads < 1 || model_dim < 1 || ff_dim < 1)
            throw ValidationError("transformer: dims must be >= 1");
        if (model_dim % num_heads != 0)
            throw ValidationError("transformer: model_dim must be divisible by num_heads");
    }

    long long param_count() const {
        long long d = model_dim, v = vocab_size, f = ff_dim;
        long long attn = 4 * (d * d + d);
        long long ln = 2 * (2 * d);
        long long ff = d * f + f + f * d + d;
        long long head = d * v + v;
        return v * d + attn + ln + ff + head;
    }
};

namespace detail {

inline Tensor glorot_uniform(long long fan_in, long long fan_out, Shape shape, CounterRng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.data) v = rng.next_uniform(-limit, limit);
    return t;
}

inline std::string layer_name(size_t layer, const char* part) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "L%02zu/%s", layer, part);
    return buf;
}

}  // namespace detail

inline ParamVector mlp_init(const MlpSpec& spec) {
    spec.validate();
    ParamVector params;
    for (size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        long long in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        CounterRng rng = CounterRng::keyed(spec.init_seed, fnv1a64("mlp_init"), l);
        params.add(detail::layer_name(l, "W"), detail::glorot_uniform(in, out, {in, out}, rng));
        params.add(detail::layer_name(l, "b"), Tensor::zeros({out}, true));
    }
    return params;
}

/// Builds the MLP graph: x W0 + b0 -> act -> ... -> logits. Returns the
/// logits node (batch x output_width).
inline int mlp_logits(Tape& tape, const MlpSpec& spec, const std::vector<int>& param_nodes,
                      const Batch& batch) {
    if (batch.features.rank() != 2 || batch.features.cols() != spec.layer_sizes.front())
        throw ShapeError("mlp input", batch.features.shape,
                         {batch.features.rank() == 2 ? batch.features.rows() : -1,
                          static_cast<long long>(spec.layer_sizes.front())});
    int x = tape.constant(batch.features);
    size_t n_layers = spec.layer_sizes.size() - 1;
    for (size_t l = 0; l < n_layers; ++l) {
        x = tape.bias_add(tape.matmul(x, param_nodes[2 * l]), param_nodes[2 * l + 1]);
        if (l + 1 < n_layers)
            x = spec.activation == Activation::relu ? tape.relu(x) : tape.tanh_fn(x);
    }
    return x;
}

/// Mean cross-entropy of the MLP over a batch. Fills `grad` when non-null.
inline double mlp_loss(const MlpSpec& spec, const ParamVector& params, const Batch& batch,
                       GradVector* grad = nullptr) {
    spec.validate();
    int out_width = spec.layer_sizes.back();
    for (int y : batch.labels)
        if (y < 0 || y >= out_width)
            throw ValidationError("mlp_loss: label " + std::to_string(y) + " out of range [0, " +
                                  std::to_string(out_width) + ")");
    Tape tape;
    std::vector<int> bound;
    int loss_node = -1;
    GraphFn graph = [&](Tape& t, const std::vector<int>& p, const Batch& b) {
        return t.cross_entropy(mlp_logits(t, spec, p, b), b.labels);
    };
    double loss = forward(tape, graph, batch, params, &bound, &loss_node, "mlp_loss");
    if (grad) *grad = backward(tape, loss_node, params, bound);
    return loss;
}

/// Argmax class predictions of the MLP, used by evaluation.
inline std::vector<int> mlp_predict(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
    Tape tape;
    std::vector<int> bound = bind_params(tape, params);
    int logits = mlp_logits(tape, spec, bound, batch);
    const Tensor& z = tape.value(logits);
    std::vector<int> pred(static_cast<size_t>(z.rows()));
    for (long long i = 0; i < z.rows(); ++i) {
        long long best = 0;
        for (long long j = 1; j < z.cols(); ++j)
            if (z.at(i, j) > z.at(i, best)) best = j;
        pred[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return pred;
}

inline ParamVector transformer_init(const TransformerSpec& spec) {
    spec.validate();
    ParamVector params;
    long long d = spec.model_dim, v = spec.vocab_size, f = spec.ff_dim;
    int piece = 0;
    auto stream = [&] { return CounterRng::keyed(spec.init_seed, fnv1a64("transformer_init"), piece++); };
    auto mat = [&](const char* name, long long rows, long long cols) {
        CounterRng rng = stream();
        params.add(name, detail::glorot_uniform(rows, cols, {rows, cols}, rng));
    };
    mat("embed/E", v, d);
    for (const char* w : {"attn/Wq", "attn/Wk", "attn/Wv", "attn/Wo"}) mat(w, d, d);
    for (const char* b : {"attn/bq", "attn/bk", "attn/bv", "attn/bo"})
        params.add(b, Tensor::zeros({d}, true));
    for (const char* g : {"ln1/g", "ln2/g"}) params.add(g, Tensor::full({d}, 1.0, true));
    for (const char* b : {"ln1/b", "ln2/b"}) params.add(b, Tensor::zeros({d}, true));
    mat("ff/W1", d, f);
    params.add("ff/b1", Tensor::zeros({f}, true));
    mat("ff/W2", f, d);
    params.add("ff/b2", Tensor::zeros({d}, true));
    mat("head/W", d, v);
    params.add("head/b", Tensor::zeros({v}, true));
    return params;
}

namespace detail {

/// Sinusoidal position encoding rows for positions [0, len).
inline Tensor position_encoding(int len, int dim) {
    Tensor pe = Tensor::zeros({len, dim});
    for (int p = 0; p < len; ++p)
        for (int i = 0; i < dim; ++i) {
            double angle = p / std::pow(10000.0, 2.0 * (i / 2) / dim);
            pe.at(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

struct TransformerNodes {
    int logits = -1;     // query-position logits, one row per sequence
    int attention = -1;  // the attention node, for probe access
};

inline TransformerNodes transformer_graph(Tape& tape, const TransformerSpec& spec,
                                          const std::vector<int>& p, const Batch& batch) {
    if (!batch.token_task()) throw ValidationError("transformer: batch has no token sequences");
    if (batch.seq_len > spec.max_seq_len)
        throw ValidationError("transformer: sequence length exceeds max_seq_len");
    for (int t : batch.tokens)
        if (t < 0 || t >= spec.vocab_size)
            throw ValidationError("transformer: token id " + std::to_string(t) +
                                  " out of range [0, " + std::to_string(spec.vocab_size) + ")");
    int n = batch.size(), L = batch.seq_len, d = spec.model_dim;

    // Parameter nodes, in the lexicographic entry order fixed by ParamVector.
    enum {
        kWk, kWo, kWq, kWv, kBk, kBo, kBq, kBv,  // attn/W*, attn/b*
        kEmbed,                                   // embed/E
        kFfW1, kFfW2, kFfB1, kFfB2,               // ff/*
        kHeadW, kHeadB,                           // head/*
        kLn1b, kLn1g, kLn2b, kLn2g,               // ln1/*, ln2/*
    };

    int x = tape.embedding(p[kEmbed], batch.tokens);
    Tensor pe_rows = position_encoding(L, d);
    Tensor pe_tiled = Tensor::zeros({static_cast<long long>(n) * L, d});
    for (int s = 0; s < n; ++s)
        std::copy(pe_rows.data.begin(), pe_rows.data.end(),
                  pe_tiled.data.begin() + static_cast<std::ptrdiff_t>(s) * L * d);
    x = tape.add(x, tape.constant(std::move(pe_tiled)));

    int q = tape.bias_add(tape.matmul(x, p[kWq]), p[kBq]);
    int k = tape.bias_add(tape.matmul(x, p[kWk]), p[kBk]);
    int v = tape.bias_add(tape.matmul(x, p[kWv]), p[kBv]);
    int att = tape.attention(q, k, v, L, spec.num_heads);
    int o = tape.bias_add(tape.matmul(att, p[kWo]), p[kBo]);
    int x1 = tape.layer_norm(tape.add(x, o), p[kLn1g], p[kLn1b], 1e-6);

    int ff = tape.bias_add(tape.matmul(x1, p[kFfW1]), p[kFfB1]);
    ff = tape.relu(ff);
    ff = tape.bias_add(tape.matmul(ff, p[kFfW2]), p[kFfB2]);
    int x2 = tape.layer_norm(tape.add(x1, ff), p[kLn2g], p[kLn2b], 1e-6);

    int logits = tape.bias_add(tape.matmul(x2, p[kHeadW]), p[kHeadB]);
    // Classify at the final (query) position of each sequence.
    std::vector<int> query_rows(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) query_rows[static_cast<size_t>(s)] = s * L + (L - 1);
    TransformerNodes out;
    out.logits = tape.embedding(logits, std::move(query_rows));
    out.attention = att;
    return out;
}

}  // namespace detail

/// Token-level cross-entropy at the query position. Fills `grad` when
/// non-null; fills `attn_probs` (seq, head, query, key layout) when non-null.
inline double transformer_loss(const TransformerSpec& spec, const ParamVector& params,
                               const Batch& batch, GradVector* grad = nullptr,
                               std::vector<double>* attn_probs = nullptr) {
    spec.validate();
    Tape tape;
    std::vector<int> bound;
    int loss_node = -1;
    int attention_node = -1;
    GraphFn graph = [&](Tape& t, const std::vector<int>& p, const Batch& b) {
        detail::TransformerNodes nodes = detail::transformer_graph(t, spec, p, b);
        attention_node = nodes.attention;
        return t.cross_entropy(nodes.logits, b.labels);
    };
    double loss = forward(tape, graph, batch, params, &bound, &loss_node, "transformer_loss");
    if (attn_probs) {
        auto probs = tape.attention_probs(attention_node);
        attn_probs->assign(probs.begin(), probs.end());
    }
    if (grad) *grad = backward(tape, loss_node, params, bound);
    return loss;
}

inline std::vector<int> transformer_predict(const TransformerSpec& spec, const ParamVector& params,
                                            const Batch& batch) {
    Tape tape;
    std::vector<int> bound = bind_params(tape, params);
    detail::TransformerNodes nodes = detail::transformer_graph(tape, spec, bound, batch);
    const Tensor& z = tape.value(nodes.logits);
    std::vector<int> pred(static_cast<size_t>(z.rows()));
    for (long long i = 0; i < z.rows(); ++i) {
        long long best = 0;
        for (long long j = 1; j < z.cols(); ++j)
            if (z.at(i, j) > z.at(i, best)) best = j;
        pred[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return pred;
}

}  // namespace samlab
