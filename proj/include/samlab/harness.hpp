#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "samlab/checkpoint.hpp"
#include "samlab/config.hpp"
#include "samlab/data.hpp"
#include "samlab/metrics.hpp"
#include "samlab/models.hpp"
#include "samlab/optim.hpp"
#include "samlab/sam.hpp"
#include "samlab/tasks.hpp"

namespace samlab {

/// A runnable training problem: data, initial parameters, and the loss /
/// prediction callbacks the trainer needs.
struct Problem {
    Dataset train;
    Dataset test;
    ParamVector init_params;
    BatchLossFn loss;
    std::function<std::vector<int>(const ParamVector&, const Batch&)> predict;
};

inline Problem build_problem(const ExperimentConfig& config) {
    config.validate();
    Problem p;
    if (config.task.kind == TaskSpec::Kind::spirals) {
        p.train = gen_spirals(config.task.n_per_class, config.task.noise_sigma, config.task.seed,
                              Split::train);
        p.test = gen_spirals(config.task.test_n_per_class, config.task.noise_sigma, config.task.seed,
                             Split::test);
    } else {
        p.train = gen_seq_lookup(config.task.n, config.task.vocab, config.task.seq_len,
                                 config.task.seed, Split::train);
        p.test = gen_seq_lookup(config.task.test_n, config.task.vocab, config.task.seq_len,
                                config.task.seed, Split::test);
    }
    if (config.task.subsample_rate < 1.0)
        p.train = subsample(p.train, {config.task.subsample_rate, config.task.subsample_seed});

    if (config.model.kind == ModelSpec::Kind::mlp) {
        MlpSpec spec = config.model.mlp;
        p.init_params = mlp_init(spec);
        p.loss = [spec](const ParamVector& w, const Batch& b, GradVector* g) {
            return mlp_loss(spec, w, b, g);
        };
        p.predict = [spec](const ParamVector& w, const Batch& b) { return mlp_predict(spec, w, b); };
    } else {
        TransformerSpec spec = config.model.transformer;
        p.init_params = transformer_init(spec);
        p.loss = [spec](const ParamVector& w, const Batch& b, GradVector* g) {
            return transformer_loss(spec, w, b, g);
        };
        p.predict = [spec](const ParamVector& w, const Batch& b) {
            return transformer_predict(spec, w, b);
        };
    }
    return p;
}

/// Draws the step's training batch: batch_size uniform with-replacement
/// indices from the "batch" stream of (run_seed, step).
inline Batch draw_batch(const Dataset& train, int batch_size, const StepRngs& rngs) {
    CounterRng rng = rngs.stream("batch");
    std::vector<int> idx(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i)
        idx[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(train.size()));
    return train.data.subset(idx);
}

struct EvalResult {
    double loss = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Full-split evaluation in fixed-size chunks (deterministic order).
inline EvalResult evaluate(const Problem& problem, const ParamVector& params, int chunk = 256) {
    const Batch& all = problem.test.data;
    int n = all.size();
    double loss_sum = 0.0;
    long long correct = 0;
    for (int begin = 0; begin < n; begin += chunk) {
        int end = std::min(n, begin + chunk);
        Batch part = all.slice(begin, end);
        loss_sum += problem.loss(params, part, nullptr) * (end - begin);
        std::vector<int> pred = problem.predict(params, part);
        for (int i = 0; i < end - begin; ++i)
            if (pred[static_cast<size_t>(i)] == part.labels[static_cast<size_t>(i)]) ++correct;
    }
    EvalResult r;
    r.loss = loss_sum / n;
    r.accuracy = static_cast<double>(correct) / n;
    return r;
}

struct RunResult {
    ParamVector final_params;
    ParamVector best_params;
    long long best_step = 0;
    double best_eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double best_eval_loss = std::numeric_limits<double>::quiet_NaN();
    double final_eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double final_eval_loss = std::numeric_limits<double>::quiet_NaN();
    double mean_step_wall_ms = std::numeric_limits<double>::quiet_NaN();
    std::filesystem::path metrics_path;
    std::filesystem::path manifest_path;
};

namespace detail {

inline void write_manifest(const ExperimentConfig& config, const RunResult& result,
                           const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kVersionString;
    j["run_seed"] = config.run_seed;
    j["config"] = to_json(config);
    j["results"] = {
        {"best_step", result.best_step},
        {"best_eval_accuracy", result.best_eval_accuracy},
        {"best_eval_loss", result.best_eval_loss},
        {"final_eval_accuracy", result.final_eval_accuracy},
        {"final_eval_loss", result.final_eval_loss},
        {"mean_step_wall_ms", result.mean_step_wall_ms},
    };
    j["artifacts"] = {
        {"metrics_csv", "metrics.csv"},
        {"final_checkpoint", "final.ckpt"},
        {"best_checkpoint", "best.ckpt"},
    };
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace detail

/// Trains for total_steps, evaluating every eval_every steps and writing one
/// metrics row per evaluation. Persists metrics.csv, manifest.json, the
/// final checkpoint, and the checkpoint with the best eval accuracy (ties go
/// to the earliest step). Fully deterministic given (config, run_seed),
/// except the wall-clock column.
inline RunResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    Problem problem = build_problem(config);
    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);

    RunResult result;
    result.metrics_path = dir / "metrics.csv";
    result.manifest_path = dir / "manifest.json";

    std::ofstream metrics(result.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + result.metrics_path.string());
    metrics << kMetricsCsvHeader << '\n';

    ParamVector params = problem.init_params;
    OptimizerState opt_state = state_init(config.optimizer, params);

    ParamVector best_params = params;
    long long best_step = 0;
    double best_acc = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();

    double window_wall = 0.0, window_norm = 0.0, total_wall = 0.0;
    long long window_steps = 0, window_skipped = 0;

    for (long long t = 1; t <= config.total_steps; ++t) {
        StepRngs rngs{config.run_seed, static_cast<uint64_t>(t)};
        Batch batch = draw_batch(problem.train, config.batch_size, rngs);
        bool eval_step = (t % config.eval_every == 0) || t == config.total_steps;
        SamStepTrace trace;
        MetricsRecord rec;
        try {
            sam_train_step(problem.loss, params, batch, config.sam, config.optimizer, opt_state,
                           rngs, trace, rec, /*compute_base_loss=*/eval_step);
        } catch (const NonFiniteError& err) {
            throw NonFiniteError(std::string(err.context()) + " (step " + std::to_string(t) + ")");
        }
        window_wall += rec.step_wall_ms;
        total_wall += rec.step_wall_ms;
        window_norm += rec.ascent_grad_norm;
        window_skipped += rec.skipped_ascent_count;
        ++window_steps;

        if (eval_step) {
            EvalResult ev = evaluate(problem, params);
            MetricsRecord row;
            row.step = t;
            row.train_loss = trace.base_loss;
            row.eval_loss = ev.loss;
            row.eval_accuracy = ev.accuracy;
            row.ascent_grad_norm = window_norm / window_steps;
            row.adv_loss_gap = trace.adv_loss - trace.base_loss;
            row.step_wall_ms = window_wall / window_steps;
            row.skipped_ascent_count = window_skipped;
            write_metrics_row(metrics, row);
            window_wall = window_norm = 0.0;
            window_steps = window_skipped = 0;

            if (ev.accuracy > best_acc) {
                best_acc = ev.accuracy;
                best_step = t;
                best_params = params;
            }
            best_loss = std::min(best_loss, ev.loss);
            result.final_eval_accuracy = ev.accuracy;
            result.final_eval_loss = ev.loss;
        }
        if (config.checkpoint_every > 0 && t % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%08lld.ckpt", t);
            save_checkpoint(params, dir / name);
        }
    }
    metrics.close();

    result.final_params = params;
    if (config.total_steps == 0) {
        best_params = params;
        best_step = 0;
    }
    result.best_params = best_params;
    result.best_step = best_step;
    if (best_acc >= 0.0) result.best_eval_accuracy = best_acc;
    if (std::isfinite(best_loss)) result.best_eval_loss = best_loss;
    if (config.total_steps > 0) result.mean_step_wall_ms = total_wall / config.total_steps;

    save_checkpoint(result.final_params, dir / "final.ckpt");
    save_checkpoint(result.best_params, dir / "best.ckpt");
    detail::write_manifest(config, result, result.manifest_path);
    return result;
}

// Sweeps.

inline constexpr const char* kSweepCsvHeader =
    "axis,value,seed,best_eval_accuracy,best_eval_loss,mean_step_wall_ms";

inline const std::vector<double>& default_sweep_values(const std::string& axis) {
    static const std::vector<double> rho{0.02, 0.05, 0.1, 0.15, 0.2, 0.3};
    static const std::vector<double> ascent{8, 24, 32, 64, 128};
    static const std::vector<double> m{1, 2, 4};
    static const std::vector<double> subsample{0.02, 0.05, 0.1, 0.2, 0.4, 0.8};
    if (axis == "rho") return rho;
    if (axis == "ascent") return ascent;
    if (axis == "m") return m;
    if (axis == "subsample") return subsample;
    throw ValidationError("sweep: unknown axis '" + axis + "'");
}

/// Applies one axis value to a copy of the base config. A rho of exactly 0
/// means "SAM off", giving sweeps a baseline arm.
inline ExperimentConfig apply_sweep_axis(ExperimentConfig config, const std::string& axis,
                                         double value) {
    if (axis == "rho") {
        if (value == 0.0) {
            config.sam.enabled = false;
        } else {
            config.sam.enabled = true;
            config.sam.rho = value;
        }
    } else if (axis == "ascent") {
        config.sam.ascent_size = static_cast<int>(value);
    } else if (axis == "m") {
        config.sam.m = static_cast<int>(value);
    } else if (axis == "subsample") {
        config.task.subsample_rate = value;
    } else {
        throw ValidationError("sweep: unknown axis '" + axis + "'");
    }
    return config;
}

struct SweepSpec {
    std::string axis;
    std::vector<double> values;   // empty: axis defaults
    std::vector<uint64_t> seeds;  // empty: run_seed .. run_seed+4
};

struct SweepCell {
    double value = 0.0;
    uint64_t seed = 0;
    double best_eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    double best_eval_loss = std::numeric_limits<double>::quiet_NaN();
    double mean_step_wall_ms = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string error;
};

struct SweepOutcome {
    std::filesystem::path csv_path;
    std::vector<SweepCell> cells;
};

/// Runs the (value x seed) grid, one run_experiment per cell, and writes one
/// CSV row per cell sorted by value then seed. A failing cell records an
/// all-NaN row and the sweep continues.
inline SweepOutcome sweep(const ExperimentConfig& base, const SweepSpec& spec) {
    std::vector<double> values = spec.values.empty() ? default_sweep_values(spec.axis) : spec.values;
    std::vector<uint64_t> seeds = spec.seeds;
    if (seeds.empty())
        for (uint64_t s = 0; s < 5; ++s) seeds.push_back(base.run_seed + s);
    std::sort(values.begin(), values.end());
    std::sort(seeds.begin(), seeds.end());

    std::filesystem::path dir(base.output_dir);
    std::filesystem::create_directories(dir);

    SweepOutcome outcome;
    for (double value : values) {
        for (uint64_t seed : seeds) {
            SweepCell cell;
            cell.value = value;
            cell.seed = seed;
            try {
                ExperimentConfig cfg = apply_sweep_axis(base, spec.axis, value);
                cfg.run_seed = seed;
                char sub[96];
                std::snprintf(sub, sizeof sub, "sweep_%s/v%g/s%llu", spec.axis.c_str(), value,
                              static_cast<unsigned long long>(seed));
                cfg.output_dir = (dir / sub).string();
                RunResult r = run_experiment(cfg);
                cell.best_eval_accuracy = r.best_eval_accuracy;
                cell.best_eval_loss = r.best_eval_loss;
                cell.mean_step_wall_ms = r.mean_step_wall_ms;
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            outcome.cells.push_back(std::move(cell));
        }
    }

    outcome.csv_path = dir / ("sweep_" + spec.axis + ".csv");
    std::ofstream csv(outcome.csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + outcome.csv_path.string());
    csv << kSweepCsvHeader << '\n';
    for (const SweepCell& c : outcome.cells)
        csv << spec.axis << ',' << format_csv_double(c.value) << ',' << c.seed << ','
            << format_csv_double(c.best_eval_accuracy) << ',' << format_csv_double(c.best_eval_loss)
            << ',' << format_csv_double(c.mean_step_wall_ms) << '\n';
    return outcome;
}

// Overhead measurement.

struct OverheadReport {
    double ratio = std::numeric_limits<double>::quiet_NaN();
    double base_median_ms = std::numeric_limits<double>::quiet_NaN();
    double sam_median_ms = std::numeric_limits<double>::quiet_NaN();
    int steps = 0;
    bool timer_warning = false;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double timer_granularity_ms() {
    using clock = std::chrono::steady_clock;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 64; ++i) {
        auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
    }
    return best;
}

}  // namespace detail

/// Runs `warm_steps` training steps with SAM per the config and again with
/// SAM disabled (identical data, init, and optimizer), and reports the
/// median per-step wall-clock ratio. The first 10% of steps per arm are
/// warmup and excluded from the medians.
inline OverheadReport measure_overhead(const ExperimentConfig& config, int warm_steps = 200) {
    config.validate();
    if (warm_steps < 10) throw ValidationError("measure_overhead: need at least 10 steps");
    Problem problem = build_problem(config);

    auto run_arm = [&](const SamConfig& sam) {
        ParamVector params = problem.init_params;
        OptimizerState state = state_init(config.optimizer, params);
        std::vector<double> wall;
        wall.reserve(static_cast<size_t>(warm_steps));
        for (int t = 1; t <= warm_steps; ++t) {
            StepRngs rngs{config.run_seed, static_cast<uint64_t>(t)};
            Batch batch = draw_batch(problem.train, config.batch_size, rngs);
            SamStepTrace trace;
            MetricsRecord rec;
            sam_train_step(problem.loss, params, batch, sam, config.optimizer, state, rngs, trace,
                           rec, /*compute_base_loss=*/false);
            wall.push_back(rec.step_wall_ms);
        }
        wall.erase(wall.begin(), wall.begin() + warm_steps / 10);
        return detail::median(wall);
    };

    SamConfig off = config.sam;
    off.enabled = false;

    OverheadReport report;
    report.steps = warm_steps;
    report.base_median_ms = run_arm(off);
    report.sam_median_ms = run_arm(config.sam);
    report.ratio = report.sam_median_ms / report.base_median_ms;
    report.timer_warning = detail::timer_granularity_ms() > 0.01 * report.base_median_ms;
    return report;
}

}  // namespace samlab
