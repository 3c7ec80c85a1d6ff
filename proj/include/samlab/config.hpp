#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "samlab/error.hpp"
#include "samlab/models.hpp"
#include "samlab/optim.hpp"
#include "samlab/sam.hpp"
#include "samlab/tasks.hpp"

namespace samlab {

inline constexpr int kConfigSpecVersion = 1;
inline constexpr const char* kVersionString = "samlab 0.1.0";

struct TaskSpec {
    enum class Kind { spirals, seq_lookup } kind = Kind::spirals;

    // spirals
    int n_per_class = 200;
    double noise_sigma = 0.05;
    int test_n_per_class = 500;

    // seq_lookup
    int n = 2000;
    int vocab = 16;
    int seq_len = 9;
    int test_n = 500;

    uint64_t seed = 0;

    // Train-split subsampling, applied after generation.
    double subsample_rate = 1.0;
    uint64_t subsample_seed = 0;

    void validate() const {
        if (!(subsample_rate > 0.0) || subsample_rate > 1.0)
            throw ValidationError("task: subsample_rate must lie in (0, 1]");
        if (kind == Kind::spirals) {
            if (n_per_class < 1 || test_n_per_class < 1)
                throw ValidationError("task: spiral counts must be >= 1");
            if (noise_sigma < 0.0) throw ValidationError("task: noise_sigma must be >= 0");
        } else {
            if (n < 1 || test_n < 1) throw ValidationError("task: sequence counts must be >= 1");
        }
    }
};

struct ModelSpec {
    enum class Kind { mlp, transformer } kind = Kind::mlp;
    MlpSpec mlp;
    TransformerSpec transformer;

    void validate() const {
        if (kind == Kind::mlp)
            mlp.validate();
        else
            transformer.validate();
    }
};

struct ExperimentConfig {
    TaskSpec task;
    ModelSpec model;
    OptimizerConfig optimizer;
    SamConfig sam;
    int batch_size = 128;
    long long total_steps = 0;
    long long eval_every = 50;
    long long checkpoint_every = 0;  // 0: only final/best checkpoints
    uint64_t run_seed = 0;
    std::string output_dir;

    void validate() const {
        task.validate();
        model.validate();
        optimizer.validate();
        if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
        sam.validate(batch_size);
        if (total_steps < 0) throw ValidationError("config: total_steps must be >= 0");
        if (eval_every < 1) throw ValidationError("config: eval_every must be >= 1");
        if (checkpoint_every < 0) throw ValidationError("config: checkpoint_every must be >= 0");
        // Checkpoint cadence must land on eval points so best-checkpoint
        // reporting lines up with the metrics file.
        if (checkpoint_every > 0 && checkpoint_every % eval_every != 0)
            throw ValidationError("config: checkpoint_every must be a multiple of eval_every");
        if (model.kind == ModelSpec::Kind::mlp && task.kind != TaskSpec::Kind::spirals)
            throw ValidationError("config: mlp model requires the spirals task");
        if (model.kind == ModelSpec::Kind::transformer && task.kind != TaskSpec::Kind::seq_lookup)
            throw ValidationError("config: transformer model requires the seq_lookup task");
        if (output_dir.empty()) throw ValidationError("config: output_dir is required");
    }
};

// JSON (de)serialization. Unknown keys are rejected so typos fail loudly.

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ValidationError(std::string("config: unknown key '") + it.key() + "' in " + where);
    }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const TaskSpec& t) {
    nlohmann::json j;
    j["kind"] = t.kind == TaskSpec::Kind::spirals ? "spirals" : "seq_lookup";
    j["seed"] = t.seed;
    if (t.kind == TaskSpec::Kind::spirals) {
        j["n_per_class"] = t.n_per_class;
        j["noise_sigma"] = t.noise_sigma;
        j["test_n_per_class"] = t.test_n_per_class;
    } else {
        j["n"] = t.n;
        j["vocab"] = t.vocab;
        j["seq_len"] = t.seq_len;
        j["test_n"] = t.test_n;
    }
    j["subsample_rate"] = t.subsample_rate;
    j["subsample_seed"] = t.subsample_seed;
    return j;
}

inline TaskSpec task_from_json(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"kind", "seed", "n_per_class", "noise_sigma", "test_n_per_class", "n",
                         "vocab", "seq_len", "test_n", "subsample_rate", "subsample_seed"},
                        "task");
    TaskSpec t;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "spirals")
        t.kind = TaskSpec::Kind::spirals;
    else if (kind == "seq_lookup")
        t.kind = TaskSpec::Kind::seq_lookup;
    else
        throw ValidationError("config: unknown task kind '" + kind + "'");
    detail::maybe(j, "seed", t.seed);
    detail::maybe(j, "n_per_class", t.n_per_class);
    detail::maybe(j, "noise_sigma", t.noise_sigma);
    detail::maybe(j, "test_n_per_class", t.test_n_per_class);
    detail::maybe(j, "n", t.n);
    detail::maybe(j, "vocab", t.vocab);
    detail::maybe(j, "seq_len", t.seq_len);
    detail::maybe(j, "test_n", t.test_n);
    detail::maybe(j, "subsample_rate", t.subsample_rate);
    detail::maybe(j, "subsample_seed", t.subsample_seed);
    return t;
}

inline nlohmann::json to_json(const ModelSpec& m) {
    nlohmann::json j;
    if (m.kind == ModelSpec::Kind::mlp) {
        j["kind"] = "mlp";
        j["layer_sizes"] = m.mlp.layer_sizes;
        j["activation"] = m.mlp.activation == Activation::relu ? "relu" : "tanh";
        j["init_seed"] = m.mlp.init_seed;
    } else {
        j["kind"] = "transformer";
        j["vocab_size"] = m.transformer.vocab_size;
        j["model_dim"] = m.transformer.model_dim;
        j["num_heads"] = m.transformer.num_heads;
        j["ff_dim"] = m.transformer.ff_dim;
        j["max_seq_len"] = m.transformer.max_seq_len;
        j["init_seed"] = m.transformer.init_seed;
    }
    return j;
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"kind", "layer_sizes", "activation", "init_seed", "vocab_size", "model_dim",
                         "num_heads", "ff_dim", "max_seq_len"},
                        "model");
    ModelSpec m;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp") {
        m.kind = ModelSpec::Kind::mlp;
        m.mlp.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
        std::string act = "relu";
        detail::maybe(j, "activation", act);
        if (act == "relu")
            m.mlp.activation = Activation::relu;
        else if (act == "tanh")
            m.mlp.activation = Activation::tanh;
        else
            throw ValidationError("config: unknown activation '" + act + "'");
        detail::maybe(j, "init_seed", m.mlp.init_seed);
    } else if (kind == "transformer") {
        m.kind = ModelSpec::Kind::transformer;
        detail::maybe(j, "vocab_size", m.transformer.vocab_size);
        detail::maybe(j, "model_dim", m.transformer.model_dim);
        detail::maybe(j, "num_heads", m.transformer.num_heads);
        detail::maybe(j, "ff_dim", m.transformer.ff_dim);
        detail::maybe(j, "max_seq_len", m.transformer.max_seq_len);
        detail::maybe(j, "init_seed", m.transformer.init_seed);
    } else {
        throw ValidationError("config: unknown model kind '" + kind + "'");
    }
    return m;
}

inline nlohmann::json to_json(const OptimizerConfig& o) {
    nlohmann::json j;
    j["kind"] = optimizer_kind_name(o.kind);
    j["learning_rate"] = o.learning_rate;
    switch (o.kind) {
        case OptimizerKind::sgd:
            break;
        case OptimizerKind::momentum:
            j["momentum"] = o.momentum;
            break;
        case OptimizerKind::adam:
            j["beta1"] = o.beta1;
            j["beta2"] = o.beta2;
            j["eps"] = o.eps;
            break;
        case OptimizerKind::adafactor:
            j["decay_exponent"] = o.adafactor_decay_exponent;
            j["clip_threshold"] = o.adafactor_clip_threshold;
            j["eps"] = o.adafactor_eps;
            break;
    }
    return j;
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
    detail::expect_keys(
        j, {"kind", "learning_rate", "momentum", "beta1", "beta2", "eps", "decay_exponent", "clip_threshold"},
        "optimizer");
    OptimizerConfig o;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "sgd")
        o.kind = OptimizerKind::sgd;
    else if (kind == "momentum")
        o.kind = OptimizerKind::momentum;
    else if (kind == "adam")
        o.kind = OptimizerKind::adam;
    else if (kind == "adafactor")
        o.kind = OptimizerKind::adafactor;
    else
        throw ValidationError("config: unknown optimizer kind '" + kind + "'");
    detail::maybe(j, "learning_rate", o.learning_rate);
    detail::maybe(j, "momentum", o.momentum);
    detail::maybe(j, "beta1", o.beta1);
    detail::maybe(j, "beta2", o.beta2);
    if (o.kind == OptimizerKind::adafactor) {
        detail::maybe(j, "eps", o.adafactor_eps);
        detail::maybe(j, "decay_exponent", o.adafactor_decay_exponent);
        detail::maybe(j, "clip_threshold", o.adafactor_clip_threshold);
    } else {
        detail::maybe(j, "eps", o.eps);
    }
    return o;
}

inline nlohmann::json to_json(const SamConfig& s) {
    nlohmann::json j;
    j["enabled"] = s.enabled;
    j["rho"] = s.rho;
    j["ascent_size"] = s.ascent_size;
    j["m"] = s.m;
    j["grad_norm_floor"] = s.grad_norm_floor;
    j["m_descent"] = s.m_descent == SamConfig::MDescent::shard ? "shard" : "full";
    return j;
}

inline SamConfig sam_from_json(const nlohmann::json& j) {
    detail::expect_keys(j, {"enabled", "rho", "ascent_size", "m", "grad_norm_floor", "m_descent"},
                        "sam");
    SamConfig s;
    detail::maybe(j, "enabled", s.enabled);
    detail::maybe(j, "rho", s.rho);
    detail::maybe(j, "ascent_size", s.ascent_size);
    detail::maybe(j, "m", s.m);
    detail::maybe(j, "grad_norm_floor", s.grad_norm_floor);
    std::string md = "shard";
    detail::maybe(j, "m_descent", md);
    if (md == "shard")
        s.m_descent = SamConfig::MDescent::shard;
    else if (md == "full")
        s.m_descent = SamConfig::MDescent::full;
    else
        throw ValidationError("config: m_descent must be 'shard' or 'full'");
    return s;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["spec_version"] = kConfigSpecVersion;
    j["task"] = to_json(c.task);
    j["model"] = to_json(c.model);
    j["optimizer"] = to_json(c.optimizer);
    j["sam"] = to_json(c.sam);
    j["batch_size"] = c.batch_size;
    j["total_steps"] = c.total_steps;
    j["eval_every"] = c.eval_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["run_seed"] = c.run_seed;
    j["output_dir"] = c.output_dir;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::expect_keys(j,
                        {"spec_version", "task", "model", "optimizer", "sam", "batch_size",
                         "total_steps", "eval_every", "checkpoint_every", "run_seed", "output_dir"},
                        "config");
    if (!j.contains("spec_version") || j.at("spec_version").get<int>() != kConfigSpecVersion)
        throw ValidationError("config: spec_version must be " + std::to_string(kConfigSpecVersion));
    ExperimentConfig c;
    c.task = task_from_json(j.at("task"));
    c.model = model_from_json(j.at("model"));
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"));
    if (j.contains("sam")) c.sam = sam_from_json(j.at("sam"));
    detail::maybe(j, "batch_size", c.batch_size);
    detail::maybe(j, "total_steps", c.total_steps);
    detail::maybe(j, "eval_every", c.eval_every);
    detail::maybe(j, "checkpoint_every", c.checkpoint_every);
    detail::maybe(j, "run_seed", c.run_seed);
    detail::maybe(j, "output_dir", c.output_dir);
    return c;
}

}  // namespace samlab
