// Copyright 2026 The ConF Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "conf/metrics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace conf;

namespace {

ObjectBox geom(double cx, double cy, double w, double h)
{
    ObjectBox b;
    b.cx = cx;
    b.cy = cy;
    b.w = w;
    b.h = h;
    b.appearance = {0.0};
    return b;
}

SigmaParams sigma_of(double s, PropertyKind k = PropertyKind::Appearance)
{
    SigmaParams p;
    p.sigma = s;
    p.kind = k;
    return p;
}

} // namespace

TEST(Distance, ScaleOfIdenticalBoxesIsOne)
{
    const auto b = geom(0.3, 0.4, 0.2, 0.5);
    EXPECT_EQ(distance(PropertyKind::Scale, b, b), 1.0);
}

TEST(Distance, PositionIgnoresSize)
{
    EXPECT_EQ(distance(PropertyKind::Position, geom(0.5, 0.5, 0.1, 0.1), geom(0.5, 0.5, 0.9, 0.3)), 0.0);
}

TEST(Distance, ScaleIsProductOfMaxRatios)
{
    EXPECT_DOUBLE_EQ(distance(PropertyKind::Scale, geom(0.5, 0.5, 0.2, 0.1), geom(0.5, 0.5, 0.1, 0.2)), 4.0);
}

TEST(Distance, AppearanceIsEuclidean)
{
    auto a = geom(0, 0, 1, 1), b = geom(0, 0, 1, 1);
    a.appearance = {0.0, 0.0};
    b.appearance = {3.0, 4.0};
    EXPECT_DOUBLE_EQ(distance(PropertyKind::Appearance, a, b), 5.0);
    b.appearance = {1.0};
    EXPECT_THROW(distance(PropertyKind::Appearance, a, b), Error);
}

TEST(Distance, AxiomsOnRandomBoxes)
{
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto a = oracle::random_box(rng, 5), b = oracle::random_box(rng, 5);
        for (auto k : kAllKinds) {
            EXPECT_GE(distance(k, a, b), 0.0);
            EXPECT_EQ(distance(k, a, b), distance(k, b, a));
            EXPECT_EQ(distance(k, a, a), k == PropertyKind::Scale ? 1.0 : 0.0);
            EXPECT_LT(oracle::rel_err(distance(k, a, b), oracle::dist(k, a, b)), 1e-14);
        }
    }
}

TEST(Sigma, ThreePointLine)
{
    // positions 0.1, 0.5, 0.9 with k = 2: the end points see {0.4, 0.8}, the
    // middle one {0.4, 0.4}; spreads sqrt(0.4), 0.4, sqrt(0.4)
    std::vector<ObjectBox> boxes{geom(0.1, 0.5, 0.1, 0.1), geom(0.5, 0.5, 0.1, 0.1), geom(0.9, 0.5, 0.1, 0.1)};
    const auto s = estimate_sigma(boxes, PropertyKind::Position, 2);
    EXPECT_NEAR(s.sigma, std::sqrt(0.4), 1e-15);
    EXPECT_FALSE(s.degenerate);
    EXPECT_EQ(s.k_nn, 2);
    EXPECT_EQ(s.kind, PropertyKind::Position);
}

TEST(Sigma, EvenCountTakesMeanOfMiddlePair)
{
    // 0.1, 0.2, 0.4, 0.8 with k = 1: nearest distances 0.1, 0.1, 0.2, 0.4
    std::vector<ObjectBox> boxes{geom(0.1, 0, 0.1, 0.1), geom(0.2, 0, 0.1, 0.1), geom(0.4, 0, 0.1, 0.1),
                                 geom(0.8, 0, 0.1, 0.1)};
    EXPECT_NEAR(estimate_sigma(boxes, PropertyKind::Position, 1).sigma, 0.15, 1e-15);
}

TEST(Sigma, IdenticalBoxesAreDegenerate)
{
    std::vector<ObjectBox> boxes(5, geom(0.3, 0.3, 0.2, 0.2));
    const auto s = estimate_sigma(boxes, PropertyKind::Position, 3);
    EXPECT_TRUE(s.degenerate);
    EXPECT_EQ(s.sigma, kDegenerateSigma);
}

TEST(Sigma, OrderInvariant)
{
    std::mt19937_64 rng(11);
    auto boxes = oracle::random_boxes(rng, 60, 4);
    for (auto k : kAllKinds) {
        const double ref = estimate_sigma(boxes, k, 10).sigma;
        for (int r = 0; r < 5; ++r) {
            std::shuffle(boxes.begin(), boxes.end(), rng);
            EXPECT_EQ(estimate_sigma(boxes, k, 10).sigma, ref);
        }
    }
}

TEST(Sigma, TooFewBoxes)
{
    std::vector<ObjectBox> boxes(3, geom(0.3, 0.3, 0.2, 0.2));
    EXPECT_THROW(estimate_sigma(boxes, PropertyKind::Position, 3), Error);
    EXPECT_THROW(estimate_sigma(boxes, PropertyKind::Position, 0), Error);
}

TEST(Compactness, SingletonIsZero)
{
    std::vector<ObjectBox> one{geom(0.5, 0.5, 0.2, 0.2)};
    EXPECT_EQ(compactness(one, PropertyKind::Position, sigma_of(1.0)), 0.0);
    EXPECT_EQ(compactness({}, PropertyKind::Position, sigma_of(1.0)), 0.0);
}

TEST(Compactness, TwoIdenticalBoxes)
{
    std::vector<ObjectBox> two(2, geom(0.5, 0.5, 0.2, 0.2));
    EXPECT_NEAR(compactness(two, PropertyKind::Position, sigma_of(1.0)), 0.19947114020071635, 1e-16);
}

TEST(Compactness, MatchesBruteForce)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> count(2, 60);
    for (int i = 0; i < 100; ++i) {
        const auto boxes = oracle::random_boxes(rng, static_cast<std::size_t>(count(rng)), 3);
        for (auto k : kAllKinds) {
            const double s = oracle::random_sigma(rng, k, 3);
            EXPECT_LT(oracle::rel_err(compactness(boxes, k, sigma_of(s, k)), oracle::compactness(boxes, k, s)), 1e-12);
        }
    }
}

TEST(Compactness, CoincidentBoxesMaximize)
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> jitter(0.0, 0.01);
    std::vector<ObjectBox> same(8, geom(0.5, 0.5, 0.2, 0.2));
    const double peak = compactness(same, PropertyKind::Position, sigma_of(0.1));
    for (int t = 0; t < 50; ++t) {
        auto moved = same;
        moved[static_cast<std::size_t>(t % 8)].cx += jitter(rng);
        moved[static_cast<std::size_t>(t % 8)].cy += 0.001;
        EXPECT_LT(compactness(moved, PropertyKind::Position, sigma_of(0.1)), peak);
    }
}

TEST(KdeWindow, IdenticalSingleReference)
{
    const auto w = geom(0.4, 0.4, 0.3, 0.3);
    std::vector<ObjectBox> ref{w};
    EXPECT_NEAR(kde_window_score(w, ref, PropertyKind::Position, sigma_of(1.0)), 0.3989422804014327, 1e-16);
}

TEST(KdeWindow, DecaysWithDistance)
{
    std::vector<ObjectBox> ref{geom(0.0, 0.0, 0.1, 0.1)};
    double prev = std::numeric_limits<double>::infinity();
    for (double x = 0.0; x <= 1.0; x += 0.05) {
        const double s = kde_window_score(geom(x, 0.0, 0.1, 0.1), ref, PropertyKind::Position, sigma_of(0.1));
        EXPECT_LT(s, prev);
        prev = s;
    }
    EXPECT_LT(prev, 1e-16);
}

TEST(KdeWindow, EmptyReferenceThrows)
{
    EXPECT_THROW(kde_window_score(geom(0.1, 0.1, 0.1, 0.1), {}, PropertyKind::Position, sigma_of(1.0)), Error);
}

TEST(KdeWindow, MatchesBruteForce)
{
    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        const auto ref = oracle::random_boxes(rng, 50, 3);
        const auto w = oracle::random_box(rng, 3);
        for (auto k : kAllKinds)
            EXPECT_LT(oracle::rel_err(kde_window_score(w, ref, k, sigma_of(0.3, k)), oracle::kde(w, ref, k, 0.3)),
                      1e-12);
    }
}

TEST(RetrievalQuality, SinglePair)
{
    std::vector<ObjectBox> a{geom(0.2, 0.2, 0.2, 0.2)};
    EXPECT_NEAR(retrieval_quality(a, a, PropertyKind::Scale, sigma_of(1.0)), 0.3989422804014327 * std::exp(-0.5),
                1e-16);
    EXPECT_NEAR(retrieval_quality(a, a, PropertyKind::Position, sigma_of(1.0)), 0.3989422804014327, 1e-16);
}

TEST(RetrievalQuality, IndependentOfMultiplicity)
{
    const auto b = geom(0.2, 0.7, 0.2, 0.4);
    const double one = retrieval_quality(std::vector<ObjectBox>{b}, std::vector<ObjectBox>{b},
                                         PropertyKind::Position, sigma_of(0.2));
    for (std::size_t m = 2; m < 8; ++m) {
        std::vector<ObjectBox> many(m, b);
        EXPECT_DOUBLE_EQ(retrieval_quality(many, many, PropertyKind::Position, sigma_of(0.2)), one);
    }
}

TEST(RetrievalQuality, EmptyThrows)
{
    std::vector<ObjectBox> a{geom(0.2, 0.2, 0.2, 0.2)};
    EXPECT_THROW(retrieval_quality({}, a, PropertyKind::Position, sigma_of(1.0)), Error);
    EXPECT_THROW(retrieval_quality(a, {}, PropertyKind::Position, sigma_of(1.0)), Error);
}

TEST(RetrievalQuality, MatchesBruteForceAndIsOrderInvariant)
{
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
        auto t = oracle::random_boxes(rng, 1 + i % 5, 3);
        auto r = oracle::random_boxes(rng, 10 + i % 30, 3);
        for (auto k : kAllKinds) {
            const double got = retrieval_quality(t, r, k, sigma_of(0.5, k));
            EXPECT_LT(oracle::rel_err(got, oracle::quality(t, r, k, 0.5)), 1e-12);
            std::shuffle(r.begin(), r.end(), rng);
            EXPECT_LT(oracle::rel_err(retrieval_quality(t, r, k, sigma_of(0.5, k)), got), 1e-14);
        }
    }
}

TEST(PropertyKindNames, RoundTrip)
{
    for (auto k : kAllKinds)
        EXPECT_EQ(parse_kind(to_string(k)), k);
    EXPECT_THROW(parse_kind("colour"), Error);
}
