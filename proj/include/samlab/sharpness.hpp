#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "samlab/error.hpp"
#include "samlab/params.hpp"
#include "samlab/rng.hpp"
#include "samlab/tensor.hpp"

namespace samlab {

/// Loss at a parameter point over fixed data; fills `grad` when non-null.
using PointLossFn = std::function<double(const ParamVector&, GradVector*)>;

struct SharpnessReport {
    double rho = 0.0;
    double worst_case_increase = 0.0;
    int ascent_steps = 0;
    int restarts = 0;            // restarts that completed
    int discarded_restarts = 0;  // restarts dropped after a non-finite loss
    double top_eigenvalue_estimate = std::numeric_limits<double>::quiet_NaN();
    uint64_t probe_seed = 0;
};

namespace detail {

/// Unit direction congruent with `tmpl`, drawn from the stream.
inline ParamVector random_unit_direction(const ParamVector& tmpl, CounterRng& rng) {
    ParamVector dir = tmpl.zeros_like();
    double norm2 = 0.0;
    for (auto& e : dir.entries())
        for (double& x : e.tensor.data) {
            x = rng.next_normal();
            norm2 += x * x;
        }
    double norm = std::sqrt(norm2);
    if (norm == 0.0) return random_unit_direction(tmpl, rng);
    scale_in_place(dir, 1.0 / norm);
    return dir;
}

}  // namespace detail

/// Estimates max L(w + eps) - L(w) over the rho-ball by projected gradient
/// ascent on eps: normalized steps of length rho/steps, projection back onto
/// the ball after each step, starting each restart on the sphere of radius
/// rho/2. The zero perturbation is always a candidate, so the result is
/// never negative.
inline SharpnessReport sharpness_probe(const PointLossFn& lossfn, const ParamVector& params,
                                       double rho, int steps, int restarts, uint64_t probe_seed) {
    if (!(rho > 0.0)) throw ValidationError("sharpness_probe: rho must be > 0");
    if (steps < 1 || restarts < 1)
        throw ValidationError("sharpness_probe: steps and restarts must be >= 1");

    SharpnessReport report;
    report.rho = rho;
    report.ascent_steps = steps;
    report.probe_seed = probe_seed;

    double base = lossfn(params, nullptr);
    if (!std::isfinite(base)) throw NonFiniteError("sharpness_probe base loss");
    double best = 0.0;
    double step_len = rho / static_cast<double>(steps);

    for (int r = 0; r < restarts; ++r) {
        CounterRng rng = CounterRng::keyed(probe_seed, fnv1a64("sharpness_probe"), static_cast<uint64_t>(r));
        ParamVector eps = detail::random_unit_direction(params, rng);
        scale_in_place(eps, rho / 2.0);
        bool ok = true;
        double restart_best = 0.0;
        for (int s = 0; s < steps; ++s) {
            ParamVector probe = params;
            add_scaled(probe, eps, 1.0);
            GradVector grad;
            double loss;
            try {
                loss = lossfn(probe, &grad);
            } catch (const NonFiniteError&) {
                ok = false;
                break;
            }
            if (!std::isfinite(loss)) {
                ok = false;
                break;
            }
            restart_best = std::max(restart_best, loss - base);
            double gnorm = l2_norm(grad);
            if (gnorm == 0.0) break;
            add_scaled(eps, grad, step_len / gnorm);
            double enorm = l2_norm(eps);
            if (enorm > rho) scale_in_place(eps, rho / enorm);
        }
        if (ok) {
            // Evaluate the final iterate too.
            ParamVector probe = params;
            add_scaled(probe, eps, 1.0);
            double loss;
            try {
                loss = lossfn(probe, nullptr);
                if (std::isfinite(loss)) restart_best = std::max(restart_best, loss - base);
            } catch (const NonFiniteError&) {
            }
            best = std::max(best, restart_best);
            ++report.restarts;
        } else {
            ++report.discarded_restarts;
        }
    }
    if (report.restarts == 0)
        throw NonFiniteError("sharpness_probe: every restart hit a non-finite loss");
    report.worst_case_increase = best;
    return report;
}

/// Top Hessian eigenvalue by power iteration, with Hv approximated by a
/// central difference of gradients along the unit direction v. Returns the
/// Rayleigh quotient after `iters` iterations. A vanishing Hv (flat or
/// linear loss) ends the iteration early with the current quotient.
inline double hessian_top_eigenvalue(const PointLossFn& lossfn, const ParamVector& params,
                                     int iters, double fd_step, uint64_t seed) {
    if (iters < 1) throw ValidationError("hessian_top_eigenvalue: iters must be >= 1");
    if (!(fd_step > 0.0)) throw ValidationError("hessian_top_eigenvalue: fd_step must be > 0");
    CounterRng rng = CounterRng::keyed(seed, fnv1a64("hessian_power_iteration"));
    ParamVector v = detail::random_unit_direction(params, rng);
    double rayleigh = 0.0;
    for (int it = 0; it < iters; ++it) {
        ParamVector plus = params;
        add_scaled(plus, v, fd_step);
        ParamVector minus = params;
        add_scaled(minus, v, -fd_step);
        GradVector gp, gm;
        lossfn(plus, &gp);
        lossfn(minus, &gm);
        std::string offender;
        if (!all_finite(gp, &offender) || !all_finite(gm, &offender))
            throw NonFiniteError("hessian_top_eigenvalue gradient at " + offender);
        // hv = (grad(w + h v) - grad(w - h v)) / 2h
        GradVector hv = gp;
        add_scaled(hv, gm, -1.0);
        scale_in_place(hv, 1.0 / (2.0 * fd_step));
        rayleigh = dot(v, hv);
        double norm = l2_norm(hv);
        if (norm < 1e-300) return rayleigh;
        scale_in_place(hv, 1.0 / norm);
        v = std::move(hv);
    }
    return rayleigh;
}

/// Loss values on a (grid_n x grid_n) planar slice spanned by the
/// orthonormalized directions. Cell (i, j) holds L(w + alpha_i u + beta_j v)
/// for uniform alpha, beta in [-half_width, +half_width].
inline Tensor loss_surface_slice(const PointLossFn& lossfn, const ParamVector& params,
                                 const ParamVector& dir_u, const ParamVector& dir_v,
                                 double half_width, int grid_n) {
    if (grid_n < 2) throw ValidationError("loss_surface_slice: grid_n must be >= 2");
    require_congruent(params, dir_u, "loss_surface_slice");
    require_congruent(params, dir_v, "loss_surface_slice");

    ParamVector u = dir_u;
    double nu = l2_norm(u);
    if (nu == 0.0) throw ValidationError("loss_surface_slice: dir_u has zero norm");
    scale_in_place(u, 1.0 / nu);

    ParamVector v = dir_v;
    add_scaled(v, u, -dot(v, u));  // Gram-Schmidt against u
    double nv = l2_norm(v);
    if (nv == 0.0) throw ValidationError("loss_surface_slice: dir_v parallel to dir_u");
    scale_in_place(v, 1.0 / nv);

    Tensor grid = Tensor::zeros({grid_n, grid_n});
    for (int i = 0; i < grid_n; ++i) {
        double alpha = -half_width + 2.0 * half_width * i / (grid_n - 1);
        for (int j = 0; j < grid_n; ++j) {
            double beta = -half_width + 2.0 * half_width * j / (grid_n - 1);
            ParamVector probe = params;
            add_scaled(probe, u, alpha);
            add_scaled(probe, v, beta);
            grid.at(i, j) = lossfn(probe, nullptr);
        }
    }
    return grid;
}

}  // namespace samlab
