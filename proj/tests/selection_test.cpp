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

#include "conf/selection.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace conf;

namespace {

ImageRecord image_with(std::int64_t id, std::vector<int> comps)
{
    ImageRecord img;
    img.id = id;
    img.global_features = {0.0};
    for (int c : comps) {
        ObjectBox b;
        b.cx = b.cy = 0.5;
        b.w = b.h = 0.1;
        b.appearance = {0.0};
        b.component_id = c;
        img.boxes.push_back(b);
    }
    return img;
}

ComponentDistribution dist(std::vector<double> p)
{
    ComponentDistribution d;
    d.probs = std::move(p);
    return d;
}

RetrievalSet members(std::vector<std::int64_t> ids)
{
    RetrievalSet r;
    for (auto id : ids)
        r.entries.push_back({id, 1});
    return r;
}

} // namespace

TEST(ImageDistribution, Counting)
{
    const auto d = image_component_distribution(image_with(0, {2, 2, 5}), 8);
    ASSERT_EQ(d.probs.size(), 8u);
    EXPECT_DOUBLE_EQ(d.probs[2], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(d.probs[5], 1.0 / 3.0);
    EXPECT_EQ(d.num_positive(), 2u);
    EXPECT_FALSE(d.empty);
}

TEST(ImageDistribution, SingleBoxIsOneHotAndBoxlessIsEmpty)
{
    const auto d = image_component_distribution(image_with(0, {3}), 4);
    EXPECT_EQ(d.probs, (std::vector<double>{0, 0, 0, 1}));
    EXPECT_TRUE(image_component_distribution(image_with(0, {}), 4).empty);
}

TEST(ImageDistribution, MissingOrOutOfRangeLabel)
{
    auto img = image_with(0, {1});
    EXPECT_THROW(image_component_distribution(img, 1), Error);
    img.boxes[0].component_id.reset();
    EXPECT_THROW(image_component_distribution(img, 4), Error);
}

TEST(Posterior, Examples)
{
    const Dataset train({image_with(0, {0}), image_with(1, {1}), image_with(2, {})}, 1, 1);
    EXPECT_EQ(posterior(members({0}), train, 2).probs, (std::vector<double>{1, 0}));
    EXPECT_EQ(posterior(members({0, 1}), train, 2).probs, (std::vector<double>{0.5, 0.5}));
    // the boxless member is skipped, not counted as zero mass
    EXPECT_EQ(posterior(members({0, 2}), train, 2).probs, (std::vector<double>{1, 0}));
    EXPECT_THROW(posterior(members({2}), train, 2), Error);
    EXPECT_THROW(posterior(RetrievalSet{}, train, 2), Error);
}

TEST(Posterior, MatchesHandLoopAndSumsToOne)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> comp(0, 6), nbox(0, 4);
    std::vector<ImageRecord> imgs;
    for (int i = 0; i < 40; ++i) {
        std::vector<int> cs(static_cast<std::size_t>(nbox(rng)));
        for (auto& c : cs)
            c = comp(rng);
        imgs.push_back(image_with(i, cs));
    }
    const Dataset train(imgs, 1, 1);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::int64_t> ids(40);
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(10);
        std::vector<long double> want(7, 0);
        int used = 0;
        for (auto id : ids) {
            const auto& b = imgs[static_cast<std::size_t>(id)].boxes;
            if (b.empty())
                continue;
            ++used;
            for (const auto& box : b)
                want[static_cast<std::size_t>(*box.component_id)] += 1.0L / b.size();
        }
        if (used == 0)
            continue;
        const auto got = posterior(members(ids), train, 7);
        double sum = 0;
        for (std::size_t c = 0; c < 7; ++c) {
            EXPECT_NEAR(got.probs[c], static_cast<double>(want[c] / used), 1e-12);
            sum += got.probs[c];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(Select, GreedyMassRule)
{
    const auto r = select_components(dist({0.5, 0.3, 0.2}), 0.7);
    EXPECT_EQ(r.selected, (std::vector<int>{0, 1}));
    EXPECT_DOUBLE_EQ(r.cumulative_mass, 0.8);
}

TEST(Select, GammaZeroPicksTopOne)
{
    EXPECT_EQ(select_components(dist({0.1, 0.6, 0.3}), 0.0).selected, std::vector<int>{1});
}

TEST(Select, OneHotPosterior)
{
    for (double g : {0.0, 0.3, 0.99})
        EXPECT_EQ(select_components(dist({0, 0, 1, 0}), g).selected, std::vector<int>{2});
}

TEST(Select, GammaOneTakesAllPositiveMassOnly)
{
    const auto r = select_components(dist({0.25, 0.0, 0.5, 0.25}), 1.0);
    EXPECT_EQ(r.selected, (std::vector<int>{2, 0, 3}));
}

TEST(Select, TiesResolveByAscendingId)
{
    EXPECT_EQ(select_components(dist({0.25, 0.25, 0.25, 0.25}), 0.3).selected, (std::vector<int>{0, 1}));
}

TEST(Select, InvalidGamma)
{
    EXPECT_THROW(select_components(dist({1.0}), -0.1), Error);
    EXPECT_THROW(select_components(dist({1.0}), 1.1), Error);
}

TEST(Select, MonotoneInGammaAndBoundedByPositives)
{
    std::mt19937_64 rng(6);
    std::gamma_distribution<double> g(0.3, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> p(10);
        double s = 0;
        for (auto& v : p) {
            v = (rng() % 3 == 0) ? 0.0 : g(rng);
            s += v;
        }
        if (s == 0)
            continue;
        for (auto& v : p)
            v /= s;
        const auto d = dist(p);
        std::vector<int> prev;
        for (int k = 0; k <= 20; ++k) {
            const auto cur = select_components(d, k / 20.0).selected;
            ASSERT_GE(cur.size(), prev.size());
            EXPECT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
            EXPECT_LE(cur.size(), d.num_positive());
            prev = cur;
        }
    }
}
