#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "samlab/data.hpp"
#include "samlab/error.hpp"
#include "samlab/metrics.hpp"
#include "samlab/optim.hpp"
#include "samlab/params.hpp"
#include "samlab/rng.hpp"

namespace samlab {

/// Loss over the given examples at the given parameters; fills `grad` when
/// non-null. Every training-side component (SAM, the base loop, probes)
/// works through this signature.
using BatchLossFn = std::function<double(const ParamVector&, const Batch&, GradVector*)>;

struct SamConfig {
    bool enabled = true;
    double rho = 0.15;
    /// Examples used for the ascent gradient. 0 resolves to max(b/4, 1).
    int ascent_size = 0;
    /// Sharpness factor: the ascent micro-batch splits into m disjoint
    /// pieces, each with its own adversarial point.
    int m = 1;
    /// Gradient norms at or below this skip the ascent step entirely.
    double grad_norm_floor = 1e-12;
    /// Whether each per-piece descent gradient sees its shard of the batch or
    /// the full batch.
    enum class MDescent { shard, full } m_descent = MDescent::shard;

    bool effectively_enabled() const { return enabled && rho > 0.0; }

    int resolve_ascent_size(int batch_size) const {
        return ascent_size > 0 ? ascent_size : std::max(batch_size / 4, 1);
    }

    void validate(int batch_size) const {
        if (rho < 0.0) throw ValidationError("sam: rho must be >= 0");
        if (grad_norm_floor < 0.0) throw ValidationError("sam: grad_norm_floor must be >= 0");
        if (!effectively_enabled()) return;
        int a = resolve_ascent_size(batch_size);
        if (a < 1 || a > batch_size)
            throw ValidationError("sam: ascent size must satisfy 1 <= a <= batch size");
        if (m < 1 || m > a) throw ValidationError("sam: m must satisfy 1 <= m <= a");
        if (a % m != 0) throw ValidationError("sam: ascent size must be divisible by m");
        if (batch_size % m != 0)
            throw ValidationError("sam: batch size must be divisible by m");
    }
};

/// Diagnostics from one SAM gradient computation. With m > 1 the epsilon and
/// ascent_grad_norm fields describe shard 0; adv_loss is the mean over
/// shards; skipped_ascent is true only when every shard skipped.
struct SamStepTrace {
    double ascent_grad_norm = 0.0;
    std::vector<double> epsilon;
    double adv_loss = std::numeric_limits<double>::quiet_NaN();
    double base_loss = std::numeric_limits<double>::quiet_NaN();
    bool skipped_ascent = false;
};

/// Draws `a` examples without replacement, uniformly, from a batch of size b.
/// Indices come from a partial Fisher-Yates shuffle over [0, b) driven by the
/// given stream, then sort ascending. a == b short-circuits to the identity
/// selection without consuming the stream.
inline MicroBatch sample_ascent_microbatch(const Batch& batch, int a, CounterRng& rng) {
    int b = batch.size();
    if (a < 1 || a > b) throw ValidationError("sample_ascent_microbatch: need 1 <= a <= b");
    MicroBatch out;
    out.indices.resize(static_cast<size_t>(a));
    if (a == b) {
        for (int i = 0; i < b; ++i) out.indices[static_cast<size_t>(i)] = i;
        out.examples = batch;
        return out;
    }
    std::vector<int> pool(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < a; ++i) {
        int j = i + static_cast<int>(rng.next_below(b - i));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        out.indices[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    std::sort(out.indices.begin(), out.indices.end());
    out.examples = batch.subset(out.indices);
    return out;
}

/// w_adv = w + rho * g / ||g||2, or w itself (skipped) when ||g||2 is at or
/// below the floor. Fills the trace's ascent_grad_norm / epsilon /
/// skipped_ascent fields.
inline ParamVector compute_ascent_point(const ParamVector& params, const GradVector& ascent_grad,
                                        double rho, double grad_norm_floor, SamStepTrace& trace) {
    require_congruent(params, ascent_grad, "compute_ascent_point");
    std::string offender;
    if (!all_finite(ascent_grad, &offender))
        throw NonFiniteError("ascent gradient for parameter " + offender);
    double norm = l2_norm(ascent_grad);
    trace.ascent_grad_norm = norm;
    if (norm <= grad_norm_floor) {
        trace.skipped_ascent = true;
        trace.epsilon.assign(static_cast<size_t>(params.total_len()), 0.0);
        return params;
    }
    trace.skipped_ascent = false;
    double step = rho / norm;
    ParamVector adv = params;
    trace.epsilon.clear();
    trace.epsilon.reserve(static_cast<size_t>(params.total_len()));
    for (size_t e = 0; e < adv.entries().size(); ++e) {
        auto& w = adv.entries()[e].tensor.data;
        const auto& g = ascent_grad.entries()[e].tensor.data;
        for (size_t i = 0; i < w.size(); ++i) {
            double eps = step * g[i];
            trace.epsilon.push_back(eps);
            w[i] += eps;
        }
    }
    return adv;
}

/// Gradient approximation for the SAM objective over one batch.
///
/// m == 1: one ascent micro-batch M of size a, one adversarial point, and the
/// descent gradient of the full batch evaluated there. m > 1: M splits into m
/// contiguous pieces of size a/m and the batch into m contiguous shards of
/// size b/m (or the full batch per piece under MDescent::full); piece j's
/// ascent gradient produces adversarial point j, shard j's gradient is taken
/// there, and the result is the unweighted mean in ascending j.
///
/// Disabled (or rho == 0) returns the plain batch gradient and consumes no
/// randomness.
inline GradVector sam_gradient(const BatchLossFn& lossfn, const ParamVector& params,
                               const Batch& batch, const SamConfig& config, const StepRngs& rngs,
                               SamStepTrace& trace) {
    config.validate(batch.size());
    if (!config.effectively_enabled()) {
        GradVector grads;
        double loss = lossfn(params, batch, &grads);
        trace.base_loss = loss;
        trace.adv_loss = loss;
        trace.ascent_grad_norm = l2_norm(grads);
        trace.skipped_ascent = false;
        trace.epsilon.clear();
        return grads;
    }

    int b = batch.size();
    int a = config.resolve_ascent_size(b);
    CounterRng ascent_rng = rngs.stream("ascent");
    MicroBatch micro = sample_ascent_microbatch(batch, a, ascent_rng);

    int pieces = config.m;
    int piece_len = a / pieces;
    int shard_len = b / pieces;
    GradVector total = params.zeros_like();
    double adv_loss_sum = 0.0;
    int skipped = 0;
    for (int j = 0; j < pieces; ++j) {
        Batch ascent_piece = micro.examples.slice(j * piece_len, (j + 1) * piece_len);
        GradVector ascent_grad;
        try {
            double ascent_loss = lossfn(params, ascent_piece, &ascent_grad);
            if (pieces == 1 && a == b) trace.base_loss = ascent_loss;  // M == B
            SamStepTrace piece_trace;
            ParamVector adv =
                compute_ascent_point(params, ascent_grad, config.rho, config.grad_norm_floor, piece_trace);
            if (j == 0) {
                trace.ascent_grad_norm = piece_trace.ascent_grad_norm;
                trace.epsilon = std::move(piece_trace.epsilon);
            }
            if (piece_trace.skipped_ascent) ++skipped;
            Batch descent = config.m_descent == SamConfig::MDescent::shard
                                ? batch.slice(j * shard_len, (j + 1) * shard_len)
                                : batch;
            GradVector shard_grad;
            adv_loss_sum += lossfn(adv, descent, &shard_grad);
            add_scaled(total, shard_grad, 1.0);
        } catch (const NonFiniteError& err) {
            throw NonFiniteError(std::string(err.context()) + " (sam shard " + std::to_string(j) + ")");
        }
    }
    scale_in_place(total, 1.0 / static_cast<double>(pieces));
    trace.adv_loss = adv_loss_sum / static_cast<double>(pieces);
    trace.skipped_ascent = skipped == pieces;
    return total;
}

/// One full SAM training step: compute g_adv, apply exactly one base
/// optimizer update, and report diagnostics. `compute_base_loss` adds a
/// forward-only pass for L_B(w) when it is not already known from the ascent
/// pass; leave it off on hot paths.
inline void sam_train_step(const BatchLossFn& lossfn, ParamVector& params, const Batch& batch,
                           const SamConfig& sam_config, const OptimizerConfig& opt_config,
                           OptimizerState& opt_state, const StepRngs& rngs, SamStepTrace& trace,
                           MetricsRecord& record, bool compute_base_loss = false) {
    auto t0 = std::chrono::steady_clock::now();
    GradVector g_adv = sam_gradient(lossfn, params, batch, sam_config, rngs, trace);
    if (compute_base_loss && std::isnan(trace.base_loss))
        trace.base_loss = lossfn(params, batch, nullptr);
    opt_step(opt_config, opt_state, params, g_adv);
    auto t1 = std::chrono::steady_clock::now();

    record.step = static_cast<long long>(rngs.step);
    record.train_loss = trace.base_loss;
    record.ascent_grad_norm = trace.ascent_grad_norm;
    record.adv_loss_gap = trace.adv_loss - trace.base_loss;
    record.step_wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    record.skipped_ascent_count = trace.skipped_ascent ? 1 : 0;
}

}  // namespace samlab
