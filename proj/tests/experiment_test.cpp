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

#include "conf/experiment.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace conf;

namespace {

ExperimentConfig tiny()
{
    ExperimentConfig c;
    c.seed = 11;
    c.synth.num_scene_types = 3;
    c.synth.num_components = 5;
    c.synth.images_per_scene = 40;
    c.synth.d_glob = 6;
    c.synth.d_app = 4;
    c.synth.nuisance_dims = 2;
    c.synth.scene_concentration = 1.0;
    c.test_fraction = 0.2;
    c.val_fraction = 0.2;
    c.train.num_trees = 8;
    c.gammas = {0.0, 0.5, 0.9, 1.0};
    c.detector.distractor_rate = 4;
    return c;
}

struct Fixture {
    ExperimentConfig cfg = tiny();
    ExperimentData data = prepare_data(cfg);
    ForestMap forests = [this] {
        ForestMap m;
        for (auto k : cfg.kinds)
            m.emplace(k, train_kind(cfg, data.train, k));
        return m;
    }();
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

} // namespace

TEST(Config, JsonRoundTripAndHash)
{
    auto c = tiny();
    c.kinds = {PropertyKind::Scale};
    c.weight_grid = {{0.5, 2.0}};
    c.shared_retrieval = true;
    const nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
    EXPECT_EQ(config_hash(back), config_hash(c));
    back.validate();
    auto d = c;
    d.seed = 12;
    EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, PartialJsonKeepsDefaults)
{
    const auto c = nlohmann::json::parse(R"({"seed": 3, "synth": {"num_components": 4}, "train": {"num_trees": 9}})")
                       .get<ExperimentConfig>();
    const ExperimentConfig d;
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.synth.num_components, 4);
    EXPECT_EQ(c.synth.images_per_scene, d.synth.images_per_scene);
    EXPECT_EQ(c.train.num_trees, 9);
    EXPECT_EQ(c.train.max_depth, d.train.max_depth);
    EXPECT_EQ(c.gammas, d.gammas);
}

TEST(Config, Validation)
{
    auto c = tiny();
    c.gammas = {1.5};
    EXPECT_THROW(c.validate(), Error);
    c = tiny();
    c.retrieval_sizes = {0};
    EXPECT_THROW(c.validate(), Error);
    c = tiny();
    c.weight_grid.clear();
    EXPECT_THROW(c.validate(), Error);
    EXPECT_THROW(nlohmann::json::parse(R"({"weight_grid": [[1]]})").get<ExperimentConfig>(), Error);
}

TEST(Data, SplitSizesAndDisjointness)
{
    const auto& f = fixture();
    const std::size_t n = 3 * 40;
    EXPECT_EQ(f.data.train.size() + f.data.val.size() + f.data.test.size(), n);
    std::set<std::int64_t> ids;
    for (const Dataset* ds : {&f.data.train, &f.data.val, &f.data.test})
        for (const auto& img : ds->images())
            EXPECT_TRUE(ids.insert(img.id).second);
    const auto again = prepare_data(f.cfg);
    EXPECT_EQ(dataset_to_string(again.test), dataset_to_string(f.data.test));
}

TEST(Retrieval, RowsAreMeansOfSamples)
{
    const auto& f = fixture();
    const auto ev = eval_retrieval(f.cfg, f.data.train, f.data.test, f.forests);
    EXPECT_EQ(ev.rows.size(), 3u * 3u * f.cfg.retrieval_sizes.size());
    for (const auto& row : ev.rows) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : ev.samples)
            if (s.kind == row.kind && s.method == row.method && s.k == row.k) {
                sum += s.quality;
                ++n;
            }
        EXPECT_EQ(n, row.num_images);
        EXPECT_NEAR(row.mean_quality, sum / static_cast<double>(n), 1e-12 * std::abs(row.mean_quality));
    }
}

TEST(Retrieval, AllTrainRowRecomputed)
{
    const auto& f = fixture();
    const auto ev = eval_retrieval(f.cfg, f.data.train, f.data.test, f.forests);
    std::vector<ObjectBox> all;
    for (const auto& img : f.data.train.images())
        all.insert(all.end(), img.boxes.begin(), img.boxes.end());
    const auto& forest = f.forests.at(PropertyKind::Scale);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& img : f.data.test.images()) {
        if (img.boxes.empty())
            continue;
        sum += retrieval_quality(img.boxes, all, PropertyKind::Scale, forest.sigma);
        ++n;
    }
    const auto& row = find_row(ev, PropertyKind::Scale, "all-train", 10);
    EXPECT_NEAR(row.mean_quality, sum / static_cast<double>(n), 1e-12 * row.mean_quality);
    EXPECT_THROW(find_row(ev, PropertyKind::Scale, "conf", 3), Error);
}

TEST(Selection, SweepReplaysFromSavedSelections)
{
    const auto& f = fixture();
    const auto sweep = select_sweep(f.cfg, f.data.train, f.data.test, f.forests.at(PropertyKind::Appearance));
    const int C = component_count(f.data.train);
    const auto det = make_detector(f.cfg.detector, f.data.train, C);
    ASSERT_EQ(sweep.points.front().method, "full");
    std::size_t random_index = 0;
    for (const auto& p : sweep.points) {
        if (p.method == "full")
            continue;
        std::map<std::int64_t, std::vector<int>> active;
        for (const auto& s : sweep.selections)
            if (s.method == p.method && s.parameter == p.parameter)
                active[s.image_id] = s.components;
        ASSERT_EQ(active.size(), f.data.test.size());
        const auto [res, cost] = run_selection(f.cfg, det, f.data.test, active);
        EXPECT_EQ(res.ap, p.ap) << p.method << " " << p.parameter;
        EXPECT_EQ(cost, p.total_cost);
        if (p.method == "random") {
            // every image runs ceil(f * C) components, f being the forest's mean fraction
            const int m = std::clamp(static_cast<int>(std::ceil(p.parameter * C - 1e-9)), 1, C);
            for (const auto& [id, comps] : active) {
                EXPECT_EQ(comps, random_components(f.cfg, C, random_index, id, m));
                EXPECT_EQ(static_cast<int>(comps.size()), m);
            }
            ++random_index;
        } else {
            double n = 0.0;
            for (const auto& [id, comps] : active)
                n += static_cast<double>(comps.size());
            EXPECT_NEAR(p.mean_fraction, n / static_cast<double>(active.size()) / C, 1e-12);
        }
    }
    EXPECT_EQ(random_index, f.cfg.gammas.size());
    EXPECT_EQ(sweep.speedup.size(), f.cfg.gammas.size());
}

TEST(Selection, ConfSetsMatchPosterior)
{
    const auto& f = fixture();
    const auto& forest = f.forests.at(PropertyKind::Appearance);
    const auto sweep = select_sweep(f.cfg, f.data.train, f.data.test, forest);
    const int C = component_count(f.data.train);
    for (const auto& s : sweep.selections) {
        if (s.method != "conf")
            continue;
        const auto& img = f.data.test.by_id(s.image_id);
        const auto r = retrieval_set(forest, img.global_features, f.cfg.k_retrieval);
        auto want = select_components(posterior(r, f.data.train, C), s.parameter).selected;
        std::sort(want.begin(), want.end());
        EXPECT_EQ(s.components, want);
    }
}

TEST(Rescore, ZeroWeightRowEqualsUnaugmented)
{
    const auto& f = fixture();
    const auto r = rescore(f.cfg, f.data.train, f.data.val, f.data.test, f.forests.at(PropertyKind::Position),
                           f.forests.at(PropertyKind::Scale));
    EXPECT_EQ(r.row("conf-zero-weights").test_ap, r.row("none").test_ap);
    EXPECT_EQ(r.row("conf-zero-weights").val_ap, r.row("none").val_ap);
    EXPECT_GE(r.row("conf").val_ap, r.row("none").val_ap);
    EXPECT_THROW(r.row("bogus"), Error);
}

TEST(Rescore, PerDetectionScoresRecomputed)
{
    const auto& f = fixture();
    const auto& pos = f.forests.at(PropertyKind::Position);
    const auto& scale = f.forests.at(PropertyKind::Scale);
    const auto r = rescore(f.cfg, f.data.train, f.data.val, f.data.test, pos, scale);
    const auto w = r.row("conf").weights;
    std::size_t checked = 0;
    for (const auto& d : r.detections) {
        if (d.method != "conf")
            continue;
        const auto& img = f.data.test.by_id(d.scored.det.image_id);
        const auto pb = gather_boxes(retrieval_set(pos, img.global_features, f.cfg.k_retrieval), f.data.train);
        const auto sb = gather_boxes(retrieval_set(scale, img.global_features, f.cfg.k_retrieval), f.data.train);
        if (pb.empty() || sb.empty())
            continue;
        const double p = kde_window_score(d.scored.det.box, pb, PropertyKind::Position, pos.sigma);
        const double s = kde_window_score(d.scored.det.box, sb, PropertyKind::Scale, scale.sigma);
        EXPECT_NEAR(d.scored.loc.pos, p, 1e-12 * std::max(1.0, p));
        EXPECT_NEAR(d.scored.loc.scale, s, 1e-12 * std::max(1.0, s));
        EXPECT_NEAR(d.combined, d.scored.det.detector_score + w.alpha_pos * p + w.alpha_scale * s, 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 0u);
}

TEST(Bench, CountersAndBytes)
{
    const auto& f = fixture();
    const auto r = bench(f.cfg, f.data.train, f.data.test, f.forests);
    ASSERT_EQ(r.knn_distances_per_probe.size(), f.data.test.size());
    for (auto n : r.knn_distances_per_probe)
        EXPECT_EQ(n, f.data.train.size());
    EXPECT_EQ(r.knn_matrix_bytes, static_cast<double>(f.data.train.size() * f.data.train.d_glob() * 8));
    for (const auto& fb : r.forests) {
        EXPECT_EQ(fb.box_distance_computations, 0u);
        EXPECT_LE(fb.max_node_visits, fb.visit_bound);
        const auto& forest = f.forests.at(fb.kind);
        // walk every tree to count internal nodes and stored indices directly
        std::size_t internal = 0, stored = 0;
        for (const auto& t : forest.trees) {
            for (const auto& n : t.nodes)
                if (!n.is_leaf())
                    ++internal;
            stored += t.leaf_ids.size();
        }
        EXPECT_EQ(fb.footprint.internal_bytes, 16 * internal);
        EXPECT_EQ(fb.footprint.leaf_bytes, 2 * stored);
        EXPECT_EQ(stored, forest.trees.size() * f.data.train.size());
    }
    const auto j = to_json_report(r, "h");
    EXPECT_EQ(j["config_hash"], "h");
    EXPECT_GT(r.scale_ratio_bound, 10.0);
}

TEST(Csv, HeadersCarryConfigHash)
{
    const auto& f = fixture();
    const auto ev = eval_retrieval(f.cfg, f.data.train, f.data.test, f.forests);
    std::ostringstream os;
    write_quality_csv(os, ev.rows, config_hash(f.cfg));
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "kind,method,k,mean_quality,num_images,config_hash");
    std::getline(in, line);
    EXPECT_EQ(line.substr(line.rfind(',') + 1), config_hash(f.cfg));
}
