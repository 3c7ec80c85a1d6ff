#include <gtest/gtest.h>

#include "samlab/params.hpp"
#include "samlab/tensor.hpp"

using namespace samlab;

TEST(Tensor, InvariantsEnforced) {
    EXPECT_THROW(Tensor({0}, {}), ValidationError);
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ValidationError);
    Tensor ok({2, 2}, {1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(ok.numel(), 4);
    EXPECT_DOUBLE_EQ(ok.at(1, 0), 3.0);
}

TEST(Tensor, ScalarIsRankZero) {
    Tensor s = Tensor::scalar(5.0);
    EXPECT_EQ(s.rank(), 0);
    EXPECT_EQ(s.numel(), 1);
}

TEST(ParamVector, FlattenFollowsNameOrder) {
    ParamVector v;
    v.add("b", Tensor({1}, {3.0}));
    v.add("a", Tensor({2}, {1.0, 2.0}));
    auto flat = v.flatten();
    ASSERT_EQ(flat.size(), 3u);
    EXPECT_DOUBLE_EQ(flat[0], 1.0);
    EXPECT_DOUBLE_EQ(flat[1], 2.0);
    EXPECT_DOUBLE_EQ(flat[2], 3.0);
}

TEST(ParamVector, RoundTripBitIdentical) {
    ParamVector v;
    v.add("w1", Tensor({2, 2}, {0.1, -0.2, 1e-300, 5.5}));
    v.add("w0", Tensor({3}, {-0.0, 7.25, 1.0 / 3.0}));
    auto flat = v.flatten();
    ParamVector back = ParamVector::unflatten(flat, v);
    ASSERT_TRUE(back.congruent_with(v));
    for (size_t e = 0; e < v.entries().size(); ++e)
        for (size_t i = 0; i < v.entries()[e].tensor.data.size(); ++i)
            EXPECT_EQ(back.entries()[e].tensor.data[i], v.entries()[e].tensor.data[i]);
}

TEST(ParamVector, UnflattenLengthMismatch) {
    ParamVector v;
    v.add("a", Tensor({3}, {1, 2, 3}));
    std::vector<double> four(4, 0.0);
    EXPECT_THROW(ParamVector::unflatten(four, v), ValidationError);
}

TEST(ParamVector, DuplicateNameRejected) {
    ParamVector v;
    v.add("a", Tensor({1}, {1.0}));
    EXPECT_THROW(v.add("a", Tensor({1}, {2.0})), ValidationError);
}

TEST(ParamVector, OrderIndependentOfInsertion) {
    ParamVector v1, v2;
    v1.add("x", Tensor({1}, {1.0}));
    v1.add("y", Tensor({1}, {2.0}));
    v2.add("y", Tensor({1}, {2.0}));
    v2.add("x", Tensor({1}, {1.0}));
    EXPECT_TRUE(v1.congruent_with(v2));
    EXPECT_EQ(v1.entries()[0].name, "x");
    EXPECT_EQ(v2.entries()[0].name, "x");
}

TEST(ParamVector, VectorMath) {
    ParamVector v;
    v.add("a", Tensor({2}, {3.0, 4.0}));
    EXPECT_DOUBLE_EQ(l2_norm(v), 5.0);
    ParamVector w = v.zeros_like();
    add_scaled(w, v, 2.0);
    EXPECT_DOUBLE_EQ(w.at("a").data[1], 8.0);
    EXPECT_DOUBLE_EQ(dot(v, w), 3.0 * 6.0 + 4.0 * 8.0);
    scale_in_place(w, 0.5);
    EXPECT_DOUBLE_EQ(w.at("a").data[0], 3.0);
}
