// Command-line driver: train / sweep / sharpness / slice / overhead.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "samlab/samlab.hpp"

namespace {

using namespace samlab;

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

/// Binds the configured task's full train split into a point loss for the
/// probing verbs.
PointLossFn full_train_loss(const Problem& problem) {
    return [&problem](const ParamVector& w, GradVector* g) {
        return problem.loss(w, problem.train.data, g);
    };
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed, bool no_sam,
              std::optional<double> rho) {
    ExperimentConfig config = load_config(config_path);
    if (seed) config.run_seed = *seed;
    if (no_sam) config.sam.enabled = false;
    if (rho) config.sam.rho = *rho;
    RunResult r = run_experiment(config);
    std::cout << "run complete: best eval accuracy " << r.best_eval_accuracy << " at step "
              << r.best_step << ", final accuracy " << r.final_eval_accuracy << "\n"
              << "metrics: " << r.metrics_path.string() << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis, std::vector<double> values,
              std::vector<uint64_t> seeds) {
    ExperimentConfig config = load_config(config_path);
    SweepSpec spec;
    spec.axis = axis;
    spec.values = std::move(values);
    spec.seeds = std::move(seeds);
    SweepOutcome out = sweep(config, spec);
    int failed = 0;
    for (const auto& c : out.cells)
        if (c.failed) {
            ++failed;
            std::cerr << "cell value=" << c.value << " seed=" << c.seed << " failed: " << c.error
                      << "\n";
        }
    std::cout << "sweep complete: " << out.cells.size() << " cells (" << failed << " failed)\n"
              << "results: " << out.csv_path.string() << "\n";
    return 0;
}

int cmd_sharpness(const std::string& config_path, const std::string& checkpoint_path, double rho,
                  int steps, int restarts, uint64_t probe_seed) {
    ExperimentConfig config = load_config(config_path);
    Problem problem = build_problem(config);
    ParamVector params = load_checkpoint(checkpoint_path);
    if (!params.congruent_with(problem.init_params))
        throw ValidationError("checkpoint parameters do not match the configured model");

    PointLossFn loss = full_train_loss(problem);
    SharpnessReport report = sharpness_probe(loss, params, rho, steps, restarts, probe_seed);
    report.top_eigenvalue_estimate = hessian_top_eigenvalue(loss, params, 100, 1e-4, probe_seed);

    nlohmann::json j;
    j["rho"] = report.rho;
    j["worst_case_increase"] = report.worst_case_increase;
    j["ascent_steps"] = report.ascent_steps;
    j["restarts"] = report.restarts;
    j["discarded_restarts"] = report.discarded_restarts;
    j["top_eigenvalue_estimate"] = report.top_eigenvalue_estimate;
    j["probe_seed"] = report.probe_seed;
    j["checkpoint"] = checkpoint_path;

    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    std::filesystem::path out_path = dir / "sharpness.json";
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path.string());
    out << j.dump(2) << '\n';
    std::cout << "worst_case_increase " << report.worst_case_increase << ", top eigenvalue "
              << report.top_eigenvalue_estimate << "\n"
              << "report: " << out_path.string() << "\n";
    return 0;
}

int cmd_slice(const std::string& config_path, const std::string& checkpoint_path, double half_width,
              int grid_n, uint64_t seed) {
    ExperimentConfig config = load_config(config_path);
    Problem problem = build_problem(config);
    ParamVector params = load_checkpoint(checkpoint_path);
    if (!params.congruent_with(problem.init_params))
        throw ValidationError("checkpoint parameters do not match the configured model");

    CounterRng rng = CounterRng::keyed(seed, fnv1a64("slice_directions"));
    ParamVector u = params.zeros_like();
    ParamVector v = params.zeros_like();
    for (auto& e : u.entries())
        for (double& x : e.tensor.data) x = rng.next_normal();
    for (auto& e : v.entries())
        for (double& x : e.tensor.data) x = rng.next_normal();

    Tensor grid = loss_surface_slice(full_train_loss(problem), params, u, v, half_width, grid_n);

    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    std::filesystem::path out_path = dir / "slice.csv";
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path.string());
    out << "alpha,beta,loss\n";
    for (int i = 0; i < grid_n; ++i) {
        double alpha = -half_width + 2.0 * half_width * i / (grid_n - 1);
        for (int j = 0; j < grid_n; ++j) {
            double beta = -half_width + 2.0 * half_width * j / (grid_n - 1);
            out << format_csv_double(alpha) << ',' << format_csv_double(beta) << ','
                << format_csv_double(grid.at(i, j)) << '\n';
        }
    }
    std::cout << "slice written: " << out_path.string() << "\n";
    return 0;
}

int cmd_overhead(const std::string& config_path, int steps) {
    ExperimentConfig config = load_config(config_path);
    OverheadReport report = measure_overhead(config, steps);
    nlohmann::json j;
    j["ratio"] = report.ratio;
    j["base_median_ms"] = report.base_median_ms;
    j["sam_median_ms"] = report.sam_median_ms;
    j["steps"] = report.steps;
    j["timer_warning"] = report.timer_warning;

    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    std::filesystem::path out_path = dir / "overhead.json";
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path.string());
    out << j.dump(2) << '\n';
    if (report.timer_warning)
        std::cerr << "warning: timer resolution is above 1% of the per-step time\n";
    std::cout << "overhead ratio " << report.ratio << " (base " << report.base_median_ms
              << " ms/step, sam " << report.sam_median_ms << " ms/step)\n"
              << "report: " << out_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"samlab: sharpness-aware minimization laboratory"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, axis;
    std::optional<uint64_t> seed_opt;
    bool no_sam = false;
    std::optional<double> rho_opt;
    std::vector<double> values;
    std::vector<uint64_t> seeds;
    double rho = 0.15, half_width = 1.0;
    int steps = 20, restarts = 8, grid_n = 41, overhead_steps = 200;
    uint64_t probe_seed = 0;

    auto* train = app.add_subcommand("train", "run one training experiment");
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--seed", seed_opt, "override run_seed");
    train->add_flag("--no-sam", no_sam, "disable SAM (base optimizer only)");
    train->add_option("--rho", rho_opt, "override SAM rho");

    auto* sw = app.add_subcommand("sweep", "grid sweep over one axis");
    sw->add_option("--config", config_path, "experiment config JSON")->required();
    sw->add_option("--axis", axis, "rho | ascent | m | subsample")->required();
    sw->add_option("--values", values, "axis values (default: per-axis grid)");
    sw->add_option("--seeds", seeds, "run seeds (default: run_seed..run_seed+4)");

    auto* sh = app.add_subcommand("sharpness", "probe a checkpoint's sharpness");
    sh->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    sh->add_option("--config", config_path, "experiment config JSON")->required();
    sh->add_option("--rho", rho, "probe radius");
    sh->add_option("--steps", steps, "ascent steps per restart");
    sh->add_option("--restarts", restarts, "probe restarts");
    sh->add_option("--seed", probe_seed, "probe seed");

    auto* sl = app.add_subcommand("slice", "2-D loss-surface slice around a checkpoint");
    sl->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    sl->add_option("--config", config_path, "experiment config JSON")->required();
    sl->add_option("--half-width", half_width, "slice half-width")->required();
    sl->add_option("--grid", grid_n, "grid resolution per axis")->required();
    sl->add_option("--seed", probe_seed, "direction seed");

    auto* ov = app.add_subcommand("overhead", "SAM vs baseline per-step wall-clock ratio");
    ov->add_option("--config", config_path, "experiment config JSON")->required();
    ov->add_option("--steps", overhead_steps, "steps per arm");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, seed_opt, no_sam, rho_opt);
        if (sw->parsed()) return cmd_sweep(config_path, axis, values, seeds);
        if (sh->parsed()) return cmd_sharpness(config_path, checkpoint_path, rho, steps, restarts, probe_seed);
        if (sl->parsed()) return cmd_slice(config_path, checkpoint_path, half_width, grid_n, probe_seed);
        if (ov->parsed()) return cmd_overhead(config_path, overhead_steps);
    } catch (const samlab::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
