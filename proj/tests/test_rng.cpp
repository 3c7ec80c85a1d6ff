#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "samlab/rng.hpp"

using namespace samlab;

TEST(CounterRng, SameKeySameSequence) {
    CounterRng a = CounterRng::keyed(42, 7);
    CounterRng b = CounterRng::keyed(42, 7);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterRng, DifferentStreamsDiffer) {
    CounterRng a = CounterRng::keyed(42, fnv1a64("batch"));
    CounterRng b = CounterRng::keyed(42, fnv1a64("ascent"));
    int same = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    EXPECT_EQ(same, 0);
}

TEST(CounterRng, UnitRange) {
    CounterRng rng(123);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.next_unit();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(CounterRng, NextBelowCoversRange) {
    CounterRng rng(9);
    std::set<int64_t> seen;
    for (int i = 0; i < 500; ++i) seen.insert(rng.next_below(7));
    EXPECT_EQ(seen.size(), 7u);
    EXPECT_EQ(*seen.begin(), 0);
    EXPECT_EQ(*seen.rbegin(), 6);
    EXPECT_THROW(rng.next_below(0), UsageError);
}

TEST(CounterRng, NormalMoments) {
    CounterRng rng(2024);
    const int n = 20000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.next_normal();
        sum += x;
        sum2 += x * x;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(StepRngs, PurposeIsolation) {
    // Consuming one purpose's stream cannot affect another purpose or step.
    StepRngs s1{5, 10};
    CounterRng batch_a = s1.stream("batch");
    uint64_t first = batch_a.next_u64();

    StepRngs s2{5, 10};
    CounterRng ascent = s2.stream("ascent");
    for (int i = 0; i < 17; ++i) ascent.next_u64();
    CounterRng batch_b = s2.stream("batch");
    EXPECT_EQ(batch_b.next_u64(), first);
}

TEST(SplitMix, KnownAvalanche) {
    // Distinct inputs produce distinct, well-spread outputs.
    std::set<uint64_t> outs;
    for (uint64_t i = 0; i < 1000; ++i) outs.insert(split_mix64(i));
    EXPECT_EQ(outs.size(), 1000u);
}
