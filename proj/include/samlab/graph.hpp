#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "samlab/data.hpp"
#include "samlab/error.hpp"
#include "samlab/params.hpp"
#include "samlab/tensor.hpp"

namespace samlab {

/// Reverse-mode autodiff over a tape of dense f64 tensors.
///
/// Ops evaluate eagerly (define-by-run): building a node computes its value
/// and records what backward() needs. backward() walks the tape in reverse
/// creation order, which is a valid topological order because inputs always
/// precede their consumers. Only scalar losses can be differentiated.
class Tape {
    enum class Op : uint8_t {
        leaf,
        matmul,
        add,
        bias_add,
        mul,
        scale,
        relu,
        tanh_fn,
        softmax,
        log_softmax,
        cross_entropy,
        mse,
        reshape,
        transpose,
        embedding,
        reduce_mean,
        reduce_sum,
        attention,
        layer_norm,
    };

    struct Node {
        Op op;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor value;
        std::vector<double> grad;  // allocated on first accumulation during backward
        bool needs_grad = false;
        double scalar = 0.0;           // scale factor / layer-norm epsilon
        std::vector<int> ids;          // embedding ids / cross-entropy labels
        std::vector<double> aux;       // cached activations for backward
        std::vector<double> aux2;      // secondary cache (layer-norm inv stddev)
        int seq_len = 0, heads = 0;    // attention geometry
    };

public:
    int leaf(Tensor value, bool needs_grad = false) {
        Node n;
        n.op = Op::leaf;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    int constant(Tensor value) { return leaf(std::move(value), false); }

    /// (m x k) . (k x n) -> (m x n)
    int matmul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
            throw ShapeError("matmul", A.shape, B.shape);
        long long m = A.rows(), k = A.cols(), n = B.cols();
        Tensor C = Tensor::zeros({m, n});
        const double* pa = A.data.data();
        const double* pb = B.data.data();
        double* pc = C.data.data();
        for (long long i = 0; i < m; ++i)
            for (long long l = 0; l < k; ++l) {
                double av = pa[i * k + l];
                const double* brow = pb + l * n;
                double* crow = pc + i * n;
                for (long long j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        return push(binary(Op::matmul, a, b, std::move(C)));
    }

    /// Elementwise sum of identically shaped tensors.
    int add(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ShapeError("add", A.shape, B.shape);
        Tensor C = A;
        C.requires_grad = false;
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
        return push(binary(Op::add, a, b, std::move(C)));
    }

    /// x (m x n) plus a length-n bias broadcast over the leading axis. The
    /// only broadcast in the library.
    int bias_add(int x, int b) {
        const Tensor& X = value(x);
        const Tensor& B = value(b);
        if (X.rank() != 2 || B.rank() != 1 || B.shape[0] != X.cols())
            throw ShapeError("bias_add", X.shape, B.shape);
        Tensor C = X;
        C.requires_grad = false;
        long long m = X.rows(), n = X.cols();
        for (long long i = 0; i < m; ++i)
            for (long long j = 0; j < n; ++j) C.data[static_cast<size_t>(i * n + j)] += B.data[static_cast<size_t>(j)];
        return push(binary(Op::bias_add, x, b, std::move(C)));
    }

    int mul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ShapeError("mul", A.shape, B.shape);
        Tensor C = A;
        C.requires_grad = false;
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
        return push(binary(Op::mul, a, b, std::move(C)));
    }

    /// Multiply by a compile-time-known scalar constant.
    int scale(int x, double c) {
        Tensor C = value(x);
        C.requires_grad = false;
        for (double& v : C.data) v *= c;
        Node n = unary(Op::scale, x, std::move(C));
        n.scalar = c;
        return push(std::move(n));
    }

    int relu(int x) {
        Tensor C = value(x);
        C.requires_grad = false;
        for (double& v : C.data) v = v > 0.0 ? v : 0.0;
        return push(unary(Op::relu, x, std::move(C)));
    }

    int tanh_fn(int x) {
        Tensor C = value(x);
        C.requires_grad = false;
        for (double& v : C.data) v = std::tanh(v);
        return push(unary(Op::tanh_fn, x, std::move(C)));
    }

    /// Row-wise softmax of a 2-D tensor.
    int softmax(int x) {
        Tensor C = rowwise_softmax(value(x), "softmax");
        return push(unary(Op::softmax, x, std::move(C)));
    }

    /// Row-wise log-softmax of a 2-D tensor.
    int log_softmax(int x) {
        const Tensor& X = value(x);
        if (X.rank() != 2) throw ShapeError("log_softmax", X.shape, {-1, -1});
        Tensor C = X;
        C.requires_grad = false;
        long long m = X.rows(), n = X.cols();
        for (long long i = 0; i < m; ++i) {
            double* row = C.data.data() + i * n;
            double mx = *std::max_element(row, row + n);
            double lse = 0.0;
            for (long long j = 0; j < n; ++j) lse += std::exp(row[j] - mx);
            lse = mx + std::log(lse);
            for (long long j = 0; j < n; ++j) row[j] -= lse;
        }
        return push(unary(Op::log_softmax, x, std::move(C)));
    }

    /// Mean negative log-likelihood of integer labels under row-wise softmax.
    int cross_entropy(int logits, std::vector<int> labels) {
        const Tensor& X = value(logits);
        if (X.rank() != 2) throw ShapeError("cross_entropy", X.shape, {-1, -1});
        long long m = X.rows(), n = X.cols();
        if (static_cast<long long>(labels.size()) != m)
            throw ShapeError("cross_entropy", X.shape, {static_cast<long long>(labels.size())});
        for (int y : labels)
            if (y < 0 || y >= n)
                throw ValidationError("cross_entropy: label " + std::to_string(y) +
                                      " out of range [0, " + std::to_string(n) + ")");
        Tensor probs = rowwise_softmax(X, "cross_entropy");
        double loss = 0.0;
        for (long long i = 0; i < m; ++i) {
            double p = probs.data[static_cast<size_t>(i * n + labels[static_cast<size_t>(i)])];
            loss -= std::log(std::max(p, 1e-300));
        }
        loss /= static_cast<double>(m);
        Node node = unary(Op::cross_entropy, logits, Tensor::scalar(loss));
        node.ids = std::move(labels);
        node.aux = std::move(probs.data);
        return push(std::move(node));
    }

    /// Mean squared error against a constant target of the same shape.
    int mse(int pred, const Tensor& target) {
        const Tensor& P = value(pred);
        if (!P.same_shape(target)) throw ShapeError("mse", P.shape, target.shape);
        double s = 0.0;
        for (size_t i = 0; i < P.data.size(); ++i) {
            double d = P.data[i] - target.data[i];
            s += d * d;
        }
        s /= static_cast<double>(P.data.size());
        Node node = unary(Op::mse, pred, Tensor::scalar(s));
        node.aux = target.data;
        return push(std::move(node));
    }

    int reshape(int x, Shape new_shape) {
        const Tensor& X = value(x);
        if (shape_numel(new_shape) != X.numel()) throw ShapeError("reshape", X.shape, new_shape);
        Tensor C = X;
        C.requires_grad = false;
        C.shape = std::move(new_shape);
        return push(unary(Op::reshape, x, std::move(C)));
    }

    /// 2-D transpose.
    int transpose(int x) {
        const Tensor& X = value(x);
        if (X.rank() != 2) throw ShapeError("transpose", X.shape, {-1, -1});
        long long m = X.rows(), n = X.cols();
        Tensor C = Tensor::zeros({n, m});
        for (long long i = 0; i < m; ++i)
            for (long long j = 0; j < n; ++j) C.data[static_cast<size_t>(j * m + i)] = X.data[static_cast<size_t>(i * n + j)];
        return push(unary(Op::transpose, x, std::move(C)));
    }

    /// Gather rows of a 2-D table by integer id; backward scatter-adds.
    /// Serves both token-embedding lookup and "pick these rows" selection.
    int embedding(int table, std::vector<int> ids) {
        const Tensor& T = value(table);
        if (T.rank() != 2) throw ShapeError("embedding", T.shape, {-1, -1});
        long long v = T.rows(), d = T.cols();
        for (int id : ids)
            if (id < 0 || id >= v)
                throw ValidationError("embedding: id " + std::to_string(id) +
                                      " out of range [0, " + std::to_string(v) + ")");
        Tensor C = Tensor::zeros({static_cast<long long>(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(T.data.begin() + static_cast<std::ptrdiff_t>(ids[i]) * d, d,
                        C.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
        Node node = unary(Op::embedding, table, std::move(C));
        node.ids = std::move(ids);
        return push(std::move(node));
    }

    int reduce_mean(int x) {
        const Tensor& X = value(x);
        double s = 0.0;
        for (double v : X.data) s += v;
        return push(unary(Op::reduce_mean, x, Tensor::scalar(s / static_cast<double>(X.numel()))));
    }

    int reduce_sum(int x) {
        const Tensor& X = value(x);
        double s = 0.0;
        for (double v : X.data) s += v;
        return push(unary(Op::reduce_sum, x, Tensor::scalar(s)));
    }

    /// Multi-head scaled dot-product attention over a batch of equal-length
    /// sequences packed as (batch*seq_len) x model_dim. Softmax probabilities
    /// are cached for backward and exposed via attention_probs().
    int attention(int q, int k, int v, int seq_len, int heads) {
        const Tensor& Q = value(q);
        const Tensor& K = value(k);
        const Tensor& V = value(v);
        if (!Q.same_shape(K) || !Q.same_shape(V)) throw ShapeError("attention", Q.shape, K.shape);
        if (Q.rank() != 2) throw ShapeError("attention", Q.shape, {-1, -1});
        long long rows = Q.rows(), d = Q.cols();
        if (seq_len < 1 || rows % seq_len != 0)
            throw ValidationError("attention: rows not divisible by seq_len");
        if (heads < 1 || d % heads != 0)
            throw ValidationError("attention: model_dim not divisible by num_heads");
        long long nseq = rows / seq_len, dh = d / heads;
        double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor O = Tensor::zeros({rows, d});
        std::vector<double> probs(static_cast<size_t>(nseq * heads * seq_len * seq_len));
        std::vector<double> srow(static_cast<size_t>(seq_len));
        for (long long b = 0; b < nseq; ++b) {
            long long base = b * seq_len;
            for (int h = 0; h < heads; ++h) {
                long long off = h * dh;
                double* pmat = probs.data() + ((b * heads + h) * seq_len) * seq_len;
                for (long long p = 0; p < seq_len; ++p) {
                    const double* qrow = Q.data.data() + (base + p) * d + off;
                    for (long long c = 0; c < seq_len; ++c) {
                        const double* krow = K.data.data() + (base + c) * d + off;
                        double s = 0.0;
                        for (long long t = 0; t < dh; ++t) s += qrow[t] * krow[t];
                        srow[static_cast<size_t>(c)] = s * att_scale;
                    }
                    double mx = *std::max_element(srow.begin(), srow.end());
                    double z = 0.0;
                    for (long long c = 0; c < seq_len; ++c) {
                        double e = std::exp(srow[static_cast<size_t>(c)] - mx);
                        pmat[p * seq_len + c] = e;
                        z += e;
                    }
                    double* orow = O.data.data() + (base + p) * d + off;
                    for (long long c = 0; c < seq_len; ++c) {
                        double w = pmat[p * seq_len + c] / z;
                        pmat[p * seq_len + c] = w;
                        const double* vrow = V.data.data() + (base + c) * d + off;
                        for (long long t = 0; t < dh; ++t) orow[t] += w * vrow[t];
                    }
                }
            }
        }
        Node node;
        node.op = Op::attention;
        node.in0 = q;
        node.in1 = k;
        node.in2 = v;
        node.value = std::move(O);
        node.needs_grad = nodes_[q].needs_grad || nodes_[k].needs_grad || nodes_[v].needs_grad;
        node.aux = std::move(probs);
        node.seq_len = seq_len;
        node.heads = heads;
        node.scalar = att_scale;
        return push(std::move(node));
    }

    /// Cached attention probabilities of an attention node, laid out as
    /// (seq, head, query, key). Rows sum to 1.
    std::span<const double> attention_probs(int node) const {
        const Node& n = at(node);
        if (n.op != Op::attention) throw UsageError("attention_probs: node is not an attention op");
        return n.aux;
    }

    /// Row-wise layer normalization with learned gain and bias.
    int layer_norm(int x, int gain, int bias, double eps) {
        const Tensor& X = value(x);
        const Tensor& G = value(gain);
        const Tensor& B = value(bias);
        if (X.rank() != 2 || G.rank() != 1 || G.shape[0] != X.cols())
            throw ShapeError("layer_norm", X.shape, G.shape);
        if (!G.same_shape(B)) throw ShapeError("layer_norm", G.shape, B.shape);
        long long m = X.rows(), n = X.cols();
        Tensor Y = Tensor::zeros({m, n});
        std::vector<double> xhat(static_cast<size_t>(m * n));
        std::vector<double> inv_std(static_cast<size_t>(m));
        for (long long i = 0; i < m; ++i) {
            const double* row = X.data.data() + i * n;
            double mu = 0.0;
            for (long long j = 0; j < n; ++j) mu += row[j];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (long long j = 0; j < n; ++j) {
                double d = row[j] - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(i)] = is;
            for (long long j = 0; j < n; ++j) {
                double xh = (row[j] - mu) * is;
                xhat[static_cast<size_t>(i * n + j)] = xh;
                Y.data[static_cast<size_t>(i * n + j)] = G.data[static_cast<size_t>(j)] * xh + B.data[static_cast<size_t>(j)];
            }
        }
        Node node;
        node.op = Op::layer_norm;
        node.in0 = x;
        node.in1 = gain;
        node.in2 = bias;
        node.value = std::move(Y);
        node.needs_grad = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
        node.scalar = eps;
        node.aux = std::move(xhat);
        node.aux2 = std::move(inv_std);
        return push(std::move(node));
    }

    const Tensor& value(int id) const { return at(id).value; }

    double scalar_value(int id) const {
        const Node& n = at(id);
        if (n.value.numel() != 1) throw UsageError("scalar_value: node is not a scalar");
        return n.value.data[0];
    }

    /// Reverse pass from a scalar loss node. Gradients accumulate into every
    /// reachable node; query them with grad(). May be called once per tape.
    void backward(int loss) {
        const Node& ln = at(loss);
        if (ln.value.numel() != 1)
            throw UsageError("backward: loss must be a scalar");
        if (ran_backward_) throw UsageError("backward: already ran on this tape");
        ran_backward_ = true;
        touch_grad(loss)[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.needs_grad || n.grad.empty() || n.op == Op::leaf) continue;
            propagate(n);
        }
    }

    /// Gradient buffer of a node after backward. Empty span means the node
    /// was never reached (its gradient is exactly zero).
    std::span<const double> grad(int id) const {
        if (!ran_backward_) throw UsageError("grad: backward has not run");
        return at(id).grad;
    }

    size_t node_count() const { return nodes_.size(); }

private:
    Node& mutable_at(int id) { return nodes_.at(static_cast<size_t>(id)); }
    const Node& at(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    Node unary(Op op, int x, Tensor val) {
        Node n;
        n.op = op;
        n.in0 = x;
        n.needs_grad = nodes_[static_cast<size_t>(x)].needs_grad;
        n.value = std::move(val);
        return n;
    }

    Node binary(Op op, int a, int b, Tensor val) {
        Node n;
        n.op = op;
        n.in0 = a;
        n.in1 = b;
        n.needs_grad = nodes_[static_cast<size_t>(a)].needs_grad || nodes_[static_cast<size_t>(b)].needs_grad;
        n.value = std::move(val);
        return n;
    }

    int push(Node n) {
        if (n.op == Op::leaf) n.needs_grad = n.needs_grad || n.value.requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static Tensor rowwise_softmax(const Tensor& X, const char* op) {
        if (X.rank() != 2) throw ShapeError(op, X.shape, {-1, -1});
        Tensor C = X;
        C.requires_grad = false;
        long long m = X.rows(), n = X.cols();
        for (long long i = 0; i < m; ++i) {
            double* row = C.data.data() + i * n;
            double mx = *std::max_element(row, row + n);
            double z = 0.0;
            for (long long j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (long long j = 0; j < n; ++j) row[j] /= z;
        }
        return C;
    }

    std::vector<double>& touch_grad(int id) {
        Node& n = mutable_at(id);
        if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
        return n.grad;
    }

    bool wants(int id) const { return id >= 0 && at(id).needs_grad; }

    void propagate(Node& n) {
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::matmul: {
                const Tensor& A = value(n.in0);
                const Tensor& B = value(n.in1);
                long long m = A.rows(), k = A.cols(), c = B.cols();
                if (wants(n.in0)) {
                    auto& da = touch_grad(n.in0);
                    for (long long i = 0; i < m; ++i)
                        for (long long l = 0; l < k; ++l) {
                            const double* grow = g.data() + i * c;
                            const double* brow = B.data.data() + l * c;
                            double s = 0.0;
                            for (long long j = 0; j < c; ++j) s += grow[j] * brow[j];
                            da[static_cast<size_t>(i * k + l)] += s;
                        }
                }
                if (wants(n.in1)) {
                    auto& db = touch_grad(n.in1);
                    for (long long i = 0; i < m; ++i)
                        for (long long l = 0; l < k; ++l) {
                            double av = A.data[static_cast<size_t>(i * k + l)];
                            const double* grow = g.data() + i * c;
                            double* brow = db.data() + l * c;
                            for (long long j = 0; j < c; ++j) brow[j] += av * grow[j];
                        }
                }
                break;
            }
            case Op::add: {
                for (int in : {n.in0, n.in1})
                    if (wants(in)) {
                        auto& d = touch_grad(in);
                        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                    }
                break;
            }
            case Op::bias_add: {
                long long m = value(n.in0).rows(), c = value(n.in0).cols();
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                }
                if (wants(n.in1)) {
                    auto& d = touch_grad(n.in1);
                    for (long long i = 0; i < m; ++i)
                        for (long long j = 0; j < c; ++j) d[static_cast<size_t>(j)] += g[static_cast<size_t>(i * c + j)];
                }
                break;
            }
            case Op::mul: {
                const Tensor& A = value(n.in0);
                const Tensor& B = value(n.in1);
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B.data[i];
                }
                if (wants(n.in1)) {
                    auto& d = touch_grad(n.in1);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * A.data[i];
                }
                break;
            }
            case Op::scale: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += n.scalar * g[i];
                }
                break;
            }
            case Op::relu: {
                if (wants(n.in0)) {
                    const Tensor& X = value(n.in0);
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i)
                        if (X.data[i] > 0.0) d[i] += g[i];
                }
                break;
            }
            case Op::tanh_fn: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - n.value.data[i] * n.value.data[i]);
                }
                break;
            }
            case Op::softmax: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    long long m = n.value.rows(), c = n.value.cols();
                    for (long long i = 0; i < m; ++i) {
                        const double* y = n.value.data.data() + i * c;
                        const double* gy = g.data() + i * c;
                        double dotv = 0.0;
                        for (long long j = 0; j < c; ++j) dotv += gy[j] * y[j];
                        double* dx = d.data() + i * c;
                        for (long long j = 0; j < c; ++j) dx[j] += y[j] * (gy[j] - dotv);
                    }
                }
                break;
            }
            case Op::log_softmax: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    long long m = n.value.rows(), c = n.value.cols();
                    for (long long i = 0; i < m; ++i) {
                        const double* y = n.value.data.data() + i * c;
                        const double* gy = g.data() + i * c;
                        double gsum = 0.0;
                        for (long long j = 0; j < c; ++j) gsum += gy[j];
                        double* dx = d.data() + i * c;
                        for (long long j = 0; j < c; ++j) dx[j] += gy[j] - std::exp(y[j]) * gsum;
                    }
                }
                break;
            }
            case Op::cross_entropy: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    long long m = value(n.in0).rows(), c = value(n.in0).cols();
                    double go = g[0] / static_cast<double>(m);
                    for (long long i = 0; i < m; ++i) {
                        const double* p = n.aux.data() + i * c;
                        double* dx = d.data() + i * c;
                        for (long long j = 0; j < c; ++j) dx[j] += go * p[j];
                        dx[n.ids[static_cast<size_t>(i)]] -= go;
                    }
                }
                break;
            }
            case Op::mse: {
                if (wants(n.in0)) {
                    const Tensor& P = value(n.in0);
                    auto& d = touch_grad(n.in0);
                    double go = 2.0 * g[0] / static_cast<double>(P.numel());
                    for (size_t i = 0; i < d.size(); ++i) d[i] += go * (P.data[i] - n.aux[i]);
                }
                break;
            }
            case Op::reshape: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                }
                break;
            }
            case Op::transpose: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    long long m = value(n.in0).rows(), c = value(n.in0).cols();
                    for (long long i = 0; i < m; ++i)
                        for (long long j = 0; j < c; ++j) d[static_cast<size_t>(i * c + j)] += g[static_cast<size_t>(j * m + i)];
                }
                break;
            }
            case Op::embedding: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    long long c = value(n.in0).cols();
                    for (size_t i = 0; i < n.ids.size(); ++i) {
                        const double* grow = g.data() + static_cast<long long>(i) * c;
                        double* drow = d.data() + static_cast<long long>(n.ids[i]) * c;
                        for (long long j = 0; j < c; ++j) drow[j] += grow[j];
                    }
                }
                break;
            }
            case Op::reduce_mean: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    double go = g[0] / static_cast<double>(d.size());
                    for (double& v : d) v += go;
                }
                break;
            }
            case Op::reduce_sum: {
                if (wants(n.in0)) {
                    auto& d = touch_grad(n.in0);
                    for (double& v : d) v += g[0];
                }
                break;
            }
            case Op::attention:
                attention_backward(n);
                break;
            case Op::layer_norm:
                layer_norm_backward(n);
                break;
        }
    }

    void attention_backward(Node& n) {
        const Tensor& Q = value(n.in0);
        const Tensor& K = value(n.in1);
        const Tensor& V = value(n.in2);
        long long rows = Q.rows(), d = Q.cols();
        long long L = n.seq_len, nseq = rows / L, dh = d / n.heads;
        double att_scale = n.scalar;
        const std::vector<double>& g = n.grad;

        bool wq = wants(n.in0), wk = wants(n.in1), wv = wants(n.in2);
        std::vector<double>* dq = wq ? &touch_grad(n.in0) : nullptr;
        std::vector<double>* dk = wk ? &touch_grad(n.in1) : nullptr;
        std::vector<double>* dv = wv ? &touch_grad(n.in2) : nullptr;

        std::vector<double> dp(static_cast<size_t>(L * L));
        std::vector<double> ds(static_cast<size_t>(L * L));
        for (long long b = 0; b < nseq; ++b) {
            long long base = b * L;
            for (int h = 0; h < n.heads; ++h) {
                long long off = static_cast<long long>(h) * dh;
                const double* pmat = n.aux.data() + ((b * n.heads + h) * L) * L;
                // dV += P^T dO ; dP = dO V^T
                for (long long p = 0; p < L; ++p) {
                    const double* grow = g.data() + (base + p) * d + off;
                    for (long long c = 0; c < L; ++c) {
                        double w = pmat[p * L + c];
                        const double* vrow = V.data.data() + (base + c) * d + off;
                        double s = 0.0;
                        for (long long t = 0; t < dh; ++t) s += grow[t] * vrow[t];
                        dp[static_cast<size_t>(p * L + c)] = s;
                        if (dv) {
                            double* dvrow = dv->data() + (base + c) * d + off;
                            for (long long t = 0; t < dh; ++t) dvrow[t] += w * grow[t];
                        }
                    }
                }
                if (!wq && !wk) continue;
                // dS = P o (dP - rowsum(dP o P))
                for (long long p = 0; p < L; ++p) {
                    double acc = 0.0;
                    for (long long c = 0; c < L; ++c) acc += dp[static_cast<size_t>(p * L + c)] * pmat[p * L + c];
                    for (long long c = 0; c < L; ++c)
                        ds[static_cast<size_t>(p * L + c)] = pmat[p * L + c] * (dp[static_cast<size_t>(p * L + c)] - acc);
                }
                for (long long p = 0; p < L; ++p)
                    for (long long c = 0; c < L; ++c) {
                        double s = ds[static_cast<size_t>(p * L + c)] * att_scale;
                        if (dq) {
                            double* dqrow = dq->data() + (base + p) * d + off;
                            const double* krow = K.data.data() + (base + c) * d + off;
                            for (long long t = 0; t < dh; ++t) dqrow[t] += s * krow[t];
                        }
                        if (dk) {
                            double* dkrow = dk->data() + (base + c) * d + off;
                            const double* qrow = Q.data.data() + (base + p) * d + off;
                            for (long long t = 0; t < dh; ++t) dkrow[t] += s * qrow[t];
                        }
                    }
            }
        }
    }

    void layer_norm_backward(Node& n) {
        const Tensor& X = value(n.in0);
        const Tensor& G = value(n.in1);
        long long m = X.rows(), c = X.cols();
        const std::vector<double>& g = n.grad;
        bool wx = wants(n.in0), wg = wants(n.in1), wb = wants(n.in2);
        std::vector<double>* dx = wx ? &touch_grad(n.in0) : nullptr;
        std::vector<double>* dgain = wg ? &touch_grad(n.in1) : nullptr;
        std::vector<double>* dbias = wb ? &touch_grad(n.in2) : nullptr;
        for (long long i = 0; i < m; ++i) {
            const double* gy = g.data() + i * c;
            const double* xh = n.aux.data() + i * c;
            double inv_std = n.aux2[static_cast<size_t>(i)];
            if (dgain)
                for (long long j = 0; j < c; ++j) (*dgain)[static_cast<size_t>(j)] += gy[j] * xh[j];
            if (dbias)
                for (long long j = 0; j < c; ++j) (*dbias)[static_cast<size_t>(j)] += gy[j];
            if (dx) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (long long j = 0; j < c; ++j) {
                    double dxh = gy[j] * G.data[static_cast<size_t>(j)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                }
                mean_dxhat /= static_cast<double>(c);
                mean_dxhat_xhat /= static_cast<double>(c);
                double* drow = dx->data() + i * c;
                for (long long j = 0; j < c; ++j) {
                    double dxh = gy[j] * G.data[static_cast<size_t>(j)];
                    drow[j] += inv_std * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        }
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

/// Binds every parameter tensor as a tape leaf, in entry order. Leaves honor
/// each tensor's requires_grad flag.
inline std::vector<int> bind_params(Tape& tape, const ParamVector& params) {
    std::vector<int> out;
    out.reserve(params.size());
    for (const auto& e : params.entries()) out.push_back(tape.leaf(e.tensor, e.tensor.requires_grad));
    return out;
}

/// A differentiable scalar program over bound parameter leaves and a batch.
using GraphFn = std::function<int(Tape&, const std::vector<int>& param_nodes, const Batch&)>;

/// Evaluates a graph to its scalar loss, recording the tape for backward.
/// Throws NonFiniteError (tagged with `context`) if the loss is not finite.
inline double forward(Tape& tape, const GraphFn& graph, const Batch& batch, const ParamVector& params,
                      std::vector<int>* bound_out = nullptr, int* loss_node_out = nullptr,
                      const std::string& context = "forward") {
    std::vector<int> bound = bind_params(tape, params);
    int loss_node = graph(tape, bound, batch);
    double loss = tape.scalar_value(loss_node);
    if (!std::isfinite(loss)) throw NonFiniteError("loss at " + context);
    if (bound_out) *bound_out = std::move(bound);
    if (loss_node_out) *loss_node_out = loss_node;
    return loss;
}

/// Runs the reverse pass and collects gradients congruent with `params`.
/// Parameters the loss never touched get exact 0.0.
inline GradVector backward(Tape& tape, int loss_node, const ParamVector& params,
                           const std::vector<int>& bound) {
    tape.backward(loss_node);
    GradVector grads = params.zeros_like();
    for (size_t i = 0; i < bound.size(); ++i) {
        auto g = tape.grad(bound[i]);
        if (g.empty()) continue;  // unreached parameter, gradient stays zero
        std::copy(g.begin(), g.end(), grads.entries()[i].tensor.data.begin());
    }
    return grads;
}

/// Central-difference gradient oracle: (L(w + h e_i) - L(w - h e_i)) / 2h.
inline GradVector fd_gradient(const std::function<double(const ParamVector&)>& lossfn,
                              const ParamVector& params, double h) {
    if (!(h > 0.0)) throw ValidationError("fd_gradient: step size must be > 0");
    GradVector out = params.zeros_like();
    ParamVector probe = params;
    for (size_t e = 0; e < probe.entries().size(); ++e) {
        auto& data = probe.entries()[e].tensor.data;
        for (size_t i = 0; i < data.size(); ++i) {
            double saved = data[i];
            data[i] = saved + h;
            double up = lossfn(probe);
            data[i] = saved - h;
            double down = lossfn(probe);
            data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NonFiniteError("fd_gradient probe at " + probe.entries()[e].name + "[" +
                                     std::to_string(i) + "]");
            out.entries()[e].tensor.data[i] = (up - down) / (2.0 * h);
        }
    }
    return out;
}

}  // namespace samlab
