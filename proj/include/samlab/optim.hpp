#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "samlab/error.hpp"
#include "samlab/params.hpp"

namespace samlab {

enum class OptimizerKind { sgd, momentum, adam, adafactor };

inline const char* optimizer_kind_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::momentum: return "momentum";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::adafactor: return "adafactor";
    }
    return "?";
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adafactor;
    double learning_rate = 1e-3;

    // adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    // sgd-momentum
    double momentum = 0.9;

    // adafactor: second-moment decay 1 - t^(-decay_exponent), update-RMS
    // clipping at clip_threshold, and the epsilon inside the sqrt.
    double adafactor_decay_exponent = 0.8;
    double adafactor_clip_threshold = 1.0;
    double adafactor_eps = 1e-30;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("optimizer: learning_rate must be > 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ValidationError("optimizer: betas must lie in [0, 1)");
        if (!(eps > 0.0) || !(adafactor_eps > 0.0))
            throw ValidationError("optimizer: eps must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ValidationError("optimizer: momentum must lie in [0, 1)");
        if (!(adafactor_decay_exponent > 0.0))
            throw ValidationError("optimizer: adafactor decay exponent must be > 0");
        if (!(adafactor_clip_threshold > 0.0))
            throw ValidationError("optimizer: adafactor clip threshold must be > 0");
    }
};

/// Per-parameter accumulator slots. Slot i is congruent with parameter
/// entry i of the ParamVector the state was initialized from.
struct OptimizerState {
    long long step_count = 0;

    std::vector<std::vector<double>> momentum_buf;  // sgd-momentum
    std::vector<std::vector<double>> adam_m, adam_v;

    struct FactoredSlot {
        bool factored = false;
        std::vector<double> row;   // length r for an (r, c) matrix
        std::vector<double> col;   // length c
        std::vector<double> full;  // unfactored fallback for rank < 2
    };
    std::vector<FactoredSlot> adafactor;
};

inline OptimizerState state_init(const OptimizerConfig& config, const ParamVector& params) {
    config.validate();
    OptimizerState st;
    switch (config.kind) {
        case OptimizerKind::sgd:
            break;
        case OptimizerKind::momentum:
            for (const auto& e : params.entries())
                st.momentum_buf.emplace_back(e.tensor.data.size(), 0.0);
            break;
        case OptimizerKind::adam:
            for (const auto& e : params.entries()) {
                st.adam_m.emplace_back(e.tensor.data.size(), 0.0);
                st.adam_v.emplace_back(e.tensor.data.size(), 0.0);
            }
            break;
        case OptimizerKind::adafactor:
            for (const auto& e : params.entries()) {
                OptimizerState::FactoredSlot slot;
                if (e.tensor.rank() == 2) {
                    slot.factored = true;
                    slot.row.assign(static_cast<size_t>(e.tensor.rows()), 0.0);
                    slot.col.assign(static_cast<size_t>(e.tensor.cols()), 0.0);
                } else {
                    slot.full.assign(e.tensor.data.size(), 0.0);
                }
                st.adafactor.push_back(std::move(slot));
            }
            break;
    }
    return st;
}

namespace detail {

inline void check_finite_grads(const GradVector& grads) {
    std::string offender;
    if (!all_finite(grads, &offender))
        throw NonFiniteError("gradient for parameter " + offender);
}

/// AdaFactor second moment estimate for one matrix entry given row/col
/// accumulators: R_i * C_j / mean(R). Exact for rank-1 g^2. A zero mean can
/// only happen when every accumulated gradient was zero, so the estimate is 0.
inline double factored_vhat(double r, double c, double mean_r) {
    return mean_r > 0.0 ? r * c / mean_r : 0.0;
}

}  // namespace detail

/// One base-optimizer update w <- opt(w, g), in place. The caller owns the
/// (state, params) pair; congruence with the state's origin is required.
inline void opt_step(const OptimizerConfig& config, OptimizerState& state, ParamVector& params,
                     const GradVector& grads) {
    config.validate();
    require_congruent(params, grads, "opt_step");
    detail::check_finite_grads(grads);
    state.step_count += 1;
    double t = static_cast<double>(state.step_count);
    double lr = config.learning_rate;

    switch (config.kind) {
        case OptimizerKind::sgd: {
            for (size_t e = 0; e < params.entries().size(); ++e) {
                auto& w = params.entries()[e].tensor.data;
                const auto& g = grads.entries()[e].tensor.data;
                for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
            }
            break;
        }
        case OptimizerKind::momentum: {
            for (size_t e = 0; e < params.entries().size(); ++e) {
                auto& w = params.entries()[e].tensor.data;
                const auto& g = grads.entries()[e].tensor.data;
                auto& v = state.momentum_buf.at(e);
                for (size_t i = 0; i < w.size(); ++i) {
                    v[i] = config.momentum * v[i] + g[i];
                    w[i] -= lr * v[i];
                }
            }
            break;
        }
        case OptimizerKind::adam: {
            double bc1 = 1.0 - std::pow(config.beta1, t);
            double bc2 = 1.0 - std::pow(config.beta2, t);
            for (size_t e = 0; e < params.entries().size(); ++e) {
                auto& w = params.entries()[e].tensor.data;
                const auto& g = grads.entries()[e].tensor.data;
                auto& m = state.adam_m.at(e);
                auto& v = state.adam_v.at(e);
                for (size_t i = 0; i < w.size(); ++i) {
                    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
                    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
                    double mhat = m[i] / bc1;
                    double vhat = v[i] / bc2;
                    w[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
                }
            }
            break;
        }
        case OptimizerKind::adafactor: {
            double decay = 1.0 - std::pow(t, -config.adafactor_decay_exponent);
            for (size_t e = 0; e < params.entries().size(); ++e) {
                auto& w = params.entries()[e].tensor.data;
                const Tensor& gt = grads.entries()[e].tensor;
                const auto& g = gt.data;
                auto& slot = state.adafactor.at(e);
                std::vector<double> update(w.size());
                if (slot.factored) {
                    long long r = gt.rows(), c = gt.cols();
                    // Decayed row/col means of g^2.
                    for (long long i = 0; i < r; ++i) {
                        double acc = 0.0;
                        for (long long j = 0; j < c; ++j) {
                            double gij = g[static_cast<size_t>(i * c + j)];
                            acc += gij * gij;
                        }
                        slot.row[static_cast<size_t>(i)] =
                            decay * slot.row[static_cast<size_t>(i)] + (1.0 - decay) * (acc / static_cast<double>(c));
                    }
                    for (long long j = 0; j < c; ++j) {
                        double acc = 0.0;
                        for (long long i = 0; i < r; ++i) {
                            double gij = g[static_cast<size_t>(i * c + j)];
                            acc += gij * gij;
                        }
                        slot.col[static_cast<size_t>(j)] =
                            decay * slot.col[static_cast<size_t>(j)] + (1.0 - decay) * (acc / static_cast<double>(r));
                    }
                    double mean_r = 0.0;
                    for (double x : slot.row) mean_r += x;
                    mean_r /= static_cast<double>(r);
                    for (long long i = 0; i < r; ++i)
                        for (long long j = 0; j < c; ++j) {
                            size_t idx = static_cast<size_t>(i * c + j);
                            double vhat = detail::factored_vhat(slot.row[static_cast<size_t>(i)],
                                                                slot.col[static_cast<size_t>(j)], mean_r);
                            update[idx] = g[idx] / std::sqrt(vhat + config.adafactor_eps);
                        }
                } else {
                    for (size_t i = 0; i < w.size(); ++i) {
                        slot.full[i] = decay * slot.full[i] + (1.0 - decay) * g[i] * g[i];
                        update[i] = g[i] / std::sqrt(slot.full[i] + config.adafactor_eps);
                    }
                }
                // Clip the update RMS at the threshold, then apply.
                double rms = 0.0;
                for (double u : update) rms += u * u;
                rms = std::sqrt(rms / static_cast<double>(update.size()));
                double shrink = 1.0 / std::max(1.0, rms / config.adafactor_clip_threshold);
                for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * shrink * update[i];
            }
            break;
        }
    }
}

}  // namespace samlab
