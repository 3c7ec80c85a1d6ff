#include <gtest/gtest.h>

#include <cmath>

#include "samlab/graph.hpp"
#include "samlab/models.hpp"
#include "samlab/tasks.hpp"

using namespace samlab;

namespace {

double max_rel_err(const GradVector& got, const GradVector& want) {
    double worst = 0.0;
    for (size_t e = 0; e < got.entries().size(); ++e)
        for (size_t i = 0; i < got.entries()[e].tensor.data.size(); ++i) {
            double g = got.entries()[e].tensor.data[i];
            double w = want.entries()[e].tensor.data[i];
            worst = std::max(worst, std::abs(g - w) / (1e-8 + std::abs(w)));
        }
    return worst;
}

}  // namespace

TEST(Forward, LinearModelSquaredError) {
    // y = w . x, w = [2], x = [3], squared-error target 0 -> loss 36
    ParamVector params;
    params.add("w", Tensor({1, 1}, {2.0}, true));
    Batch batch;
    batch.features = Tensor({1, 1}, {3.0});
    batch.labels = {0};
    Tape tape;
    GraphFn graph = [](Tape& t, const std::vector<int>& p, const Batch& b) {
        int y = t.matmul(t.constant(b.features), p[0]);
        return t.mse(y, Tensor({1, 1}, {0.0}));
    };
    EXPECT_DOUBLE_EQ(forward(tape, graph, batch, params), 36.0);
}

TEST(Forward, ZeroParameterConstantGraph) {
    ParamVector params;
    Batch batch;
    Tape tape;
    GraphFn graph = [](Tape& t, const std::vector<int>&, const Batch&) {
        return t.constant(Tensor::scalar(5.0));
    };
    EXPECT_DOUBLE_EQ(forward(tape, graph, batch, params), 5.0);
}

TEST(Forward, ShapeMismatchNamesOperationAndShapes) {
    Tape tape;
    int a = tape.constant(Tensor::zeros({2, 3}));
    int b = tape.constant(Tensor::zeros({2, 3}));
    try {
        tape.matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.op(), "matmul");
        EXPECT_EQ(e.lhs_shape(), (std::vector<long long>{2, 3}));
        EXPECT_EQ(e.rhs_shape(), (std::vector<long long>{2, 3}));
    }
}

TEST(Forward, NonFiniteLossRaises) {
    ParamVector params;
    params.add("w", Tensor::scalar(1e308, true));
    Batch batch;
    Tape tape;
    GraphFn graph = [](Tape& t, const std::vector<int>& p, const Batch&) {
        return t.mul(p[0], p[0]);  // overflows to inf
    };
    EXPECT_THROW(forward(tape, graph, batch, params, nullptr, nullptr, "step 3"), NonFiniteError);
}

TEST(Backward, SquareAtThree) {
    ParamVector params;
    params.add("w", Tensor::scalar(3.0, true));
    Batch batch;
    Tape tape;
    std::vector<int> bound;
    int loss = -1;
    GraphFn graph = [](Tape& t, const std::vector<int>& p, const Batch&) {
        return t.mul(p[0], p[0]);
    };
    forward(tape, graph, batch, params, &bound, &loss);
    GradVector g = backward(tape, loss, params, bound);
    EXPECT_DOUBLE_EQ(g.at("w").data[0], 6.0);
}

TEST(Backward, UnreachedParameterGetsExactZero) {
    ParamVector params;
    params.add("used", Tensor::scalar(2.0, true));
    params.add("unused", Tensor::scalar(7.0, true));
    Batch batch;
    Tape tape;
    std::vector<int> bound;
    int loss = -1;
    GraphFn graph = [](Tape& t, const std::vector<int>& p, const Batch&) {
        return t.mul(p[1], p[1]);  // p[1] is "used" (lexicographic order)
    };
    forward(tape, graph, batch, params, &bound, &loss);
    GradVector g = backward(tape, loss, params, bound);
    EXPECT_EQ(g.at("unused").data[0], 0.0);
    EXPECT_DOUBLE_EQ(g.at("used").data[0], 4.0);
}

TEST(Backward, UsageErrors) {
    Tape tape;
    int x = tape.leaf(Tensor::zeros({2, 2}), true);
    EXPECT_THROW(tape.grad(x), UsageError);       // backward has not run
    EXPECT_THROW(tape.backward(x), UsageError);   // loss is not scalar
}

TEST(FdGradient, QuadraticExact) {
    ParamVector params;
    params.add("w", Tensor::scalar(3.0));
    auto lossfn = [](const ParamVector& p) {
        double w = p.at("w").data[0];
        return w * w;
    };
    GradVector g = fd_gradient(lossfn, params, 1e-4);
    EXPECT_NEAR(g.at("w").data[0], 6.0, 1e-7);
}

TEST(FdGradient, SineAtZero) {
    ParamVector params;
    params.add("w", Tensor::scalar(0.0));
    auto lossfn = [](const ParamVector& p) { return std::sin(p.at("w").data[0]); };
    GradVector g = fd_gradient(lossfn, params, 1e-5);
    EXPECT_NEAR(g.at("w").data[0], 1.0, 1e-9);
}

TEST(FdGradient, ConstantLossAllZero) {
    ParamVector params;
    params.add("a", Tensor({3}, {1, 2, 3}));
    auto lossfn = [](const ParamVector&) { return 4.5; };
    GradVector g = fd_gradient(lossfn, params, 1e-4);
    for (double v : g.at("a").data) EXPECT_EQ(v, 0.0);
}

TEST(FdGradient, RejectsBadStepAndNonFinite) {
    ParamVector params;
    params.add("a", Tensor::scalar(1.0));
    auto lossfn = [](const ParamVector&) { return 0.0; };
    EXPECT_THROW(fd_gradient(lossfn, params, 0.0), ValidationError);
    auto nan_loss = [](const ParamVector&) { return std::nan(""); };
    EXPECT_THROW(fd_gradient(nan_loss, params, 1e-4), NonFiniteError);
}

// Every op's backward against finite differences, through a scalar head.
TEST(Ops, FiniteDifferenceChecks) {
    CounterRng rng(31);
    auto rand_tensor = [&](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        for (double& v : t.data) v = rng.next_uniform(-1.0, 1.0);
        return t;
    };

    struct Case {
        const char* name;
        ParamVector params;
        std::function<double(const ParamVector&, GradVector*)> eval;
    };
    std::vector<Case> cases;

    auto make_case = [&](const char* name, ParamVector params,
                         std::function<int(Tape&, const std::vector<int>&)> build) {
        Case c;
        c.name = name;
        c.params = std::move(params);
        c.eval = [build](const ParamVector& p, GradVector* grad) {
            Tape tape;
            std::vector<int> bound = bind_params(tape, p);
            int loss = build(tape, bound);
            double v = tape.scalar_value(loss);
            if (grad) {
                tape.backward(loss);
                GradVector g = p.zeros_like();
                for (size_t i = 0; i < bound.size(); ++i) {
                    auto gr = tape.grad(bound[i]);
                    if (!gr.empty()) std::copy(gr.begin(), gr.end(), g.entries()[i].tensor.data.begin());
                }
                *grad = std::move(g);
            }
            return v;
        };
        cases.push_back(std::move(c));
    };

    {
        ParamVector p;
        p.add("a", rand_tensor({3, 4}));
        p.add("b", rand_tensor({4, 2}));
        make_case("matmul", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_sum(t.tanh_fn(t.matmul(n[0], n[1])));
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({2, 3}));
        p.add("y", rand_tensor({2, 3}));
        make_case("add_mul", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_mean(t.mul(t.add(n[0], n[1]), n[1]));
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({3, 5}));
        p.add("b", rand_tensor({5}));
        make_case("bias_add_relu", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_sum(t.relu(t.bias_add(n[1], n[0])));
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({4, 3}));
        Tensor ramp = Tensor::zeros({4, 3});
        for (size_t i = 0; i < ramp.data.size(); ++i) ramp.data[i] = 0.1 * static_cast<double>(i) - 0.4;
        make_case("softmax", std::move(p), [ramp](Tape& t, const std::vector<int>& n) {
            return t.reduce_sum(t.mul(t.softmax(n[0]), t.constant(ramp)));
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({4, 3}));
        make_case("log_softmax", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_mean(t.log_softmax(n[0]));
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({5, 4}));
        make_case("cross_entropy", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.cross_entropy(n[0], {0, 3, 1, 2, 3});
        });
    }
    {
        ParamVector p;
        p.add("x", rand_tensor({2, 3}));
        make_case("mse_reshape_transpose", std::move(p), [](Tape& t, const std::vector<int>& n) {
            int y = t.transpose(t.reshape(t.scale(n[0], 1.7), {3, 2}));
            return t.mse(y, Tensor::full({2, 3}, 0.25));
        });
    }
    {
        ParamVector p;
        p.add("table", rand_tensor({6, 3}));
        make_case("embedding", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_sum(t.tanh_fn(t.embedding(n[0], {5, 0, 0, 2})));
        });
    }
    {
        ParamVector p;
        p.add("q", rand_tensor({6, 4}));
        p.add("k", rand_tensor({6, 4}));
        p.add("v", rand_tensor({6, 4}));
        make_case("attention", std::move(p), [](Tape& t, const std::vector<int>& n) {
            // entry order is k, q, v
            return t.reduce_sum(t.tanh_fn(t.attention(n[1], n[0], n[2], 3, 2)));
        });
    }
    {
        ParamVector p;
        p.add("bias", rand_tensor({4}));
        p.add("gain", rand_tensor({4}));
        p.add("x", rand_tensor({3, 4}));
        make_case("layer_norm", std::move(p), [](Tape& t, const std::vector<int>& n) {
            return t.reduce_sum(t.tanh_fn(t.layer_norm(n[2], n[1], n[0], 1e-6)));
        });
    }

    for (auto& c : cases) {
        GradVector autodiff;
        c.eval(c.params, &autodiff);
        GradVector fd = fd_gradient([&](const ParamVector& p) { return c.eval(p, nullptr); },
                                    c.params, 1e-6);
        EXPECT_LT(max_rel_err(autodiff, fd), 2e-5) << "op case: " << c.name;
    }
}

TEST(Backward, GradientAccumulationIsLinear) {
    // backward(alpha L1 + beta L2) == alpha grad(L1) + beta grad(L2)
    CounterRng rng(77);
    ParamVector params;
    Tensor w = Tensor::zeros({3, 3}, true);
    for (double& v : w.data) v = rng.next_uniform(-1, 1);
    params.add("w", std::move(w));
    const double alpha = 1.7, beta = -0.4;

    auto eval = [&](int which, GradVector* grad) {
        Tape tape;
        std::vector<int> bound = bind_params(tape, params);
        int l1 = tape.reduce_mean(tape.tanh_fn(bound[0]));
        int l2 = tape.reduce_sum(tape.mul(bound[0], bound[0]));
        int loss = which == 1 ? l1 : which == 2 ? l2 : tape.add(tape.scale(l1, alpha), tape.scale(l2, beta));
        tape.backward(loss);
        GradVector g = params.zeros_like();
        auto gr = tape.grad(bound[0]);
        std::copy(gr.begin(), gr.end(), g.entries()[0].tensor.data.begin());
        if (grad) *grad = g;
        return tape.scalar_value(loss);
    };

    GradVector g1, g2, gc;
    eval(1, &g1);
    eval(2, &g2);
    eval(0, &gc);
    for (size_t i = 0; i < gc.at("w").data.size(); ++i) {
        double want = alpha * g1.at("w").data[i] + beta * g2.at("w").data[i];
        double got = gc.at("w").data[i];
        EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST(Backward, MlpMatchesFiniteDifferences) {
    // MLP(2-4-2), seed 7, one batch of spiral points.
    MlpSpec spec{{2, 4, 2}, Activation::relu, 7};
    ParamVector params = mlp_init(spec);
    Dataset ds = gen_spirals(4, 0.05, 7);
    GradVector autodiff;
    mlp_loss(spec, params, ds.data, &autodiff);
    GradVector fd = fd_gradient(
        [&](const ParamVector& p) { return mlp_loss(spec, p, ds.data, nullptr); }, params, 1e-5);
    EXPECT_LT(max_rel_err(autodiff, fd), 1e-6);
}

TEST(Backward, Deterministic) {
    MlpSpec spec{{2, 8, 2}, Activation::tanh, 3};
    ParamVector params = mlp_init(spec);
    Dataset ds = gen_spirals(8, 0.1, 5);
    GradVector g1, g2;
    double l1 = mlp_loss(spec, params, ds.data, &g1);
    double l2 = mlp_loss(spec, params, ds.data, &g2);
    EXPECT_EQ(l1, l2);
    for (size_t e = 0; e < g1.entries().size(); ++e)
        for (size_t i = 0; i < g1.entries()[e].tensor.data.size(); ++i)
            EXPECT_EQ(g1.entries()[e].tensor.data[i], g2.entries()[e].tensor.data[i]);
}
