#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "samlab/models.hpp"
#include "samlab/tasks.hpp"

using namespace samlab;

TEST(MlpInit, CountsAndZeroBiases) {
    MlpSpec spec{{2, 3}, Activation::relu, 0};
    ParamVector p = mlp_init(spec);
    EXPECT_EQ(p.total_len(), 9);  // 6 weights + 3 biases
    EXPECT_EQ(spec.param_count(), 9);
    for (double b : p.at("L00/b").data) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(p.at("L00/W").shape, (Shape{2, 3}));
}

TEST(MlpInit, DeterministicPerSeed) {
    MlpSpec spec{{2, 5, 3}, Activation::tanh, 42};
    ParamVector a = mlp_init(spec);
    ParamVector b = mlp_init(spec);
    ASSERT_TRUE(a.congruent_with(b));
    auto fa = a.flatten(), fb = b.flatten();
    for (size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(fa[i], fb[i]);

    spec.init_seed = 43;
    auto fc = mlp_init(spec).flatten();
    int diff = 0;
    for (size_t i = 0; i < fa.size(); ++i)
        if (fa[i] != fc[i]) ++diff;
    EXPECT_GT(diff, 0);
}

TEST(MlpInit, GlorotBoundsRespected) {
    MlpSpec spec{{4, 6}, Activation::relu, 9};
    ParamVector p = mlp_init(spec);
    double limit = std::sqrt(6.0 / (4 + 6));
    for (double w : p.at("L00/W").data) {
        EXPECT_GT(w, -limit);
        EXPECT_LT(w, limit);
    }
}

TEST(MlpInit, RejectsSingleLayerSpec) {
    MlpSpec spec{{2}, Activation::relu, 0};
    EXPECT_THROW(mlp_init(spec), ValidationError);
}

TEST(MlpLoss, SymmetricLogitsGiveLogTwo) {
    // All-zero weights produce identical logits, so the softmax is uniform.
    MlpSpec spec{{2, 4, 2}, Activation::relu, 0};
    ParamVector p = mlp_init(spec);
    for (auto& e : p.entries())
        for (double& v : e.tensor.data) v = 0.0;
    Batch batch;
    batch.features = Tensor({3, 2}, {0.5, -1.0, 2.0, 0.0, -0.3, 0.7});
    batch.labels = {0, 1, 0};
    EXPECT_NEAR(mlp_loss(spec, p, batch), std::log(2.0), 1e-9);
}

TEST(MlpLoss, OneHotScaleDrivesLossToZero) {
    MlpSpec spec{{1, 2}, Activation::relu, 0};
    Batch batch;
    batch.features = Tensor({1, 1}, {1.0});
    batch.labels = {0};
    double prev = std::numeric_limits<double>::infinity();
    for (double scale : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        ParamVector p = mlp_init(spec);
        p.at("L00/W").data = {scale, -scale};
        double loss = mlp_loss(spec, p, batch);
        EXPECT_LT(loss, prev);
        prev = loss;
    }
    EXPECT_LT(prev, 1e-10);
}

TEST(MlpLoss, MatchesScalarOracleOnSpirals) {
    MlpSpec spec{{2, 4, 2}, Activation::relu, 7};
    ParamVector p = mlp_init(spec);
    Dataset ds = gen_spirals(4, 0.05, 7);  // 8 points
    double lib = mlp_loss(spec, p, ds.data);
    double ref = oracle::mlp_loss_scalar(spec, p, ds.data);
    EXPECT_NEAR(lib, ref, 1e-12 * std::max(1.0, std::abs(ref)));
}

TEST(MlpLoss, LabelOutOfRange) {
    MlpSpec spec{{2, 2}, Activation::relu, 0};
    ParamVector p = mlp_init(spec);
    Batch batch;
    batch.features = Tensor({1, 2}, {0.0, 0.0});
    batch.labels = {2};
    EXPECT_THROW(mlp_loss(spec, p, batch), ValidationError);
}

TEST(MlpLoss, PermutingBatchLeavesMeanLossUnchanged) {
    MlpSpec spec{{2, 8, 2}, Activation::relu, 5};
    ParamVector p = mlp_init(spec);
    Dataset ds = gen_spirals(10, 0.1, 11);
    double base = mlp_loss(spec, p, ds.data);
    std::vector<int> perm(static_cast<size_t>(ds.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    double permuted = mlp_loss(spec, p, ds.data.subset(perm));
    EXPECT_NEAR(base, permuted, 1e-12 * std::max(1.0, std::abs(base)));
}

TEST(TransformerInit, ParamCountFormula) {
    TransformerSpec spec{16, 32, 2, 64, 16, 0};
    ParamVector p = transformer_init(spec);
    EXPECT_EQ(p.total_len(), spec.param_count());
    // vocab*d + 4(d^2+d) + 2*2d + (d*ff+ff+ff*d+d) + (d*vocab+vocab)
    EXPECT_EQ(spec.param_count(),
              16 * 32 + 4 * (32 * 32 + 32) + 2 * 64 + (32 * 64 + 64 + 64 * 32 + 32) + (32 * 16 + 16));
}

TEST(TransformerInit, EntryOrderPinned) {
    // The graph builder indexes parameter nodes positionally; pin the order.
    TransformerSpec spec{6, 8, 2, 12, 8, 0};
    ParamVector p = transformer_init(spec);
    const char* expect[] = {"attn/Wk", "attn/Wo", "attn/Wq", "attn/Wv", "attn/bk", "attn/bo",
                            "attn/bq", "attn/bv", "embed/E", "ff/W1",   "ff/W2",   "ff/b1",
                            "ff/b2",   "head/W",  "head/b",  "ln1/b",   "ln1/g",   "ln2/b",
                            "ln2/g"};
    ASSERT_EQ(p.size(), std::size(expect));
    for (size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.entries()[i].name, expect[i]);
}

TEST(TransformerInit, RejectsIndivisibleHeads) {
    TransformerSpec spec{8, 10, 3, 16, 8, 0};
    EXPECT_THROW(transformer_init(spec), ValidationError);
}

TEST(TransformerLoss, SingletonSequenceAttentionIsOne) {
    TransformerSpec spec{4, 8, 1, 16, 4, 0};
    ParamVector p = transformer_init(spec);
    Batch batch;
    batch.seq_len = 1;
    batch.tokens = {2};
    batch.labels = {1};
    std::vector<double> probs;
    transformer_loss(spec, p, batch, nullptr, &probs);
    ASSERT_EQ(probs.size(), 1u);
    EXPECT_DOUBLE_EQ(probs[0], 1.0);
}

TEST(TransformerLoss, AttentionRowsSumToOne) {
    TransformerSpec spec{8, 8, 2, 16, 8, 3};
    ParamVector p = transformer_init(spec);
    Dataset ds = gen_seq_lookup(6, 8, 5, 3);
    std::vector<double> probs;
    transformer_loss(spec, p, ds.data, nullptr, &probs);
    int L = ds.data.seq_len;
    size_t rows = probs.size() / static_cast<size_t>(L);
    ASSERT_EQ(rows, static_cast<size_t>(6 * 2 * L));
    for (size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int k = 0; k < L; ++k) s += probs[r * static_cast<size_t>(L) + static_cast<size_t>(k)];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(TransformerLoss, GradientMatchesFiniteDifferences) {
    TransformerSpec spec{5, 4, 2, 8, 8, 11};
    ParamVector p = transformer_init(spec);
    Batch batch;
    batch.seq_len = 3;
    batch.tokens = {0, 3, 1, 2, 4, 2};
    batch.labels = {3, 4};
    GradVector autodiff;
    transformer_loss(spec, p, batch, &autodiff);
    GradVector fd = fd_gradient(
        [&](const ParamVector& w) { return transformer_loss(spec, w, batch, nullptr); }, p, 1e-5);
    double worst = 0.0;
    for (size_t e = 0; e < autodiff.entries().size(); ++e)
        for (size_t i = 0; i < autodiff.entries()[e].tensor.data.size(); ++i) {
            double a = autodiff.entries()[e].tensor.data[i];
            double f = fd.entries()[e].tensor.data[i];
            worst = std::max(worst, std::abs(a - f) / (1e-8 + std::abs(f)));
        }
    EXPECT_LT(worst, 1e-5);
}

TEST(TransformerLoss, TokenOutOfRange) {
    TransformerSpec spec{4, 8, 1, 16, 4, 0};
    ParamVector p = transformer_init(spec);
    Batch batch;
    batch.seq_len = 1;
    batch.tokens = {4};
    batch.labels = {0};
    EXPECT_THROW(transformer_loss(spec, p, batch), ValidationError);
}

TEST(TransformerLoss, SequenceTooLong) {
    TransformerSpec spec{4, 8, 1, 16, 2, 0};
    ParamVector p = transformer_init(spec);
    Batch batch;
    batch.seq_len = 3;
    batch.tokens = {0, 1, 2};
    batch.labels = {0};
    EXPECT_THROW(transformer_loss(spec, p, batch), ValidationError);
}

TEST(TransformerLoss, PermutingBatchLeavesMeanLossUnchanged) {
    TransformerSpec spec{8, 8, 2, 16, 8, 1};
    ParamVector p = transformer_init(spec);
    Dataset ds = gen_seq_lookup(8, 8, 5, 9);
    double base = transformer_loss(spec, p, ds.data);
    std::vector<int> perm(static_cast<size_t>(ds.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    double permuted = transformer_loss(spec, p, ds.data.subset(perm));
    EXPECT_NEAR(base, permuted, 1e-12 * std::max(1.0, std::abs(base)));
}
