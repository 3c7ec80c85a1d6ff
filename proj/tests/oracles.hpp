#pragma once

// Test-side reference implementations. These deliberately avoid the tape,
// the optimizer classes, and every other library compute path: straight-line
// scalar loops only, so they can stand as independent oracles.

#include <cmath>
#include <vector>

#include "samlab/data.hpp"
#include "samlab/models.hpp"
#include "samlab/params.hpp"

namespace oracle {

/// Scalar-by-scalar MLP mean cross-entropy, reading the same weights the
/// library uses but evaluating them with plain loops.
inline double mlp_loss_scalar(const samlab::MlpSpec& spec, const samlab::ParamVector& params,
                              const samlab::Batch& batch) {
    size_t n_layers = spec.layer_sizes.size() - 1;
    double total = 0.0;
    int n = batch.size();
    for (int ex = 0; ex < n; ++ex) {
        std::vector<double> act(static_cast<size_t>(spec.layer_sizes[0]));
        for (int j = 0; j < spec.layer_sizes[0]; ++j)
            act[static_cast<size_t>(j)] = batch.features.at(ex, j);
        for (size_t l = 0; l < n_layers; ++l) {
            char wname[32], bname[32];
            std::snprintf(wname, sizeof wname, "L%02zu/W", l);
            std::snprintf(bname, sizeof bname, "L%02zu/b", l);
            const samlab::Tensor& W = params.at(wname);
            const samlab::Tensor& B = params.at(bname);
            std::vector<double> next(static_cast<size_t>(spec.layer_sizes[l + 1]));
            for (long long o = 0; o < W.cols(); ++o) {
                double s = B.data[static_cast<size_t>(o)];
                for (long long i = 0; i < W.rows(); ++i) s += act[static_cast<size_t>(i)] * W.at(i, o);
                next[static_cast<size_t>(o)] = s;
            }
            if (l + 1 < n_layers)
                for (double& v : next)
                    v = spec.activation == samlab::Activation::relu ? (v > 0 ? v : 0) : std::tanh(v);
            act = std::move(next);
        }
        // cross-entropy of the label under softmax(logits)
        double mx = act[0];
        for (double v : act) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : act) z += std::exp(v - mx);
        double logp = act[static_cast<size_t>(batch.labels[static_cast<size_t>(ex)])] - mx - std::log(z);
        total -= logp;
    }
    return total / n;
}

/// One AdaFactor step on a single r x c matrix parameter, written directly
/// from the factored rule: decayed row/col means of g^2, second moment
/// R_i C_j / mean(R), update g / sqrt(V + eps), RMS clip at d, scale by lr.
struct AdafactorScalarState {
    std::vector<double> row, col;
    long long t = 0;
};

inline std::vector<double> adafactor_matrix_step(std::vector<double> w, const std::vector<double>& g,
                                                 long long r, long long c,
                                                 AdafactorScalarState& st, double lr,
                                                 double decay_exponent, double clip, double eps) {
    if (st.row.empty()) {
        st.row.assign(static_cast<size_t>(r), 0.0);
        st.col.assign(static_cast<size_t>(c), 0.0);
    }
    st.t += 1;
    double beta = 1.0 - std::pow(static_cast<double>(st.t), -decay_exponent);
    for (long long i = 0; i < r; ++i) {
        double acc = 0.0;
        for (long long j = 0; j < c; ++j) acc += g[static_cast<size_t>(i * c + j)] * g[static_cast<size_t>(i * c + j)];
        st.row[static_cast<size_t>(i)] = beta * st.row[static_cast<size_t>(i)] + (1.0 - beta) * acc / c;
    }
    for (long long j = 0; j < c; ++j) {
        double acc = 0.0;
        for (long long i = 0; i < r; ++i) acc += g[static_cast<size_t>(i * c + j)] * g[static_cast<size_t>(i * c + j)];
        st.col[static_cast<size_t>(j)] = beta * st.col[static_cast<size_t>(j)] + (1.0 - beta) * acc / r;
    }
    double mean_r = 0.0;
    for (double x : st.row) mean_r += x;
    mean_r /= r;
    std::vector<double> u(w.size());
    for (long long i = 0; i < r; ++i)
        for (long long j = 0; j < c; ++j) {
            size_t k = static_cast<size_t>(i * c + j);
            double vhat = mean_r > 0 ? st.row[static_cast<size_t>(i)] * st.col[static_cast<size_t>(j)] / mean_r : 0.0;
            u[k] = g[k] / std::sqrt(vhat + eps);
        }
    double rms = 0.0;
    for (double x : u) rms += x * x;
    rms = std::sqrt(rms / static_cast<double>(u.size()));
    double shrink = 1.0 / std::max(1.0, rms / clip);
    for (size_t k = 0; k < w.size(); ++k) w[k] -= lr * shrink * u[k];
    return w;
}

/// The 1-D SAM-SGD recurrence on L(x) = a x^2 / 2:
/// x' = x - lr * a * (x + rho * sign(x)).
inline double sam_sgd_quadratic_recurrence(double x0, double curvature, double rho, double lr,
                                           int steps) {
    double x = x0;
    for (int t = 0; t < steps; ++t) {
        double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
        x = x - lr * curvature * (x + rho * s);
    }
    return x;
}

}  // namespace oracle
