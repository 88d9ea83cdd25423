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

// End-to-end experiment pipelines driven by one declarative configuration:
// data preparation, forest training, retrieval evaluation, component
// selection sweeps, location rescoring and cost benchmarks. Every table
// carries the hash of the configuration that produced it.

#pragma once

#include "baseline.hpp"
#include "dataset.hpp"
#include "detection.hpp"
#include "forest.hpp"
#include "metrics.hpp"
#include "mockdet.hpp"
#include "rescore.hpp"
#include "selection.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace conf {

struct DetectorConfig {
    double score_noise = 0.05;
    double cost_per_component = 1.0;
    int distractor_rate = 20;
    double distractor_app_noise = 0.12;
    double distractor_min_size = 0.05;
    double distractor_max_size = 0.45;
};

inline void to_json(nlohmann::json& j, const DetectorConfig& c)
{
    j = nlohmann::json{{"score_noise", c.score_noise},
                       {"cost_per_component", c.cost_per_component},
                       {"distractor_rate", c.distractor_rate},
                       {"distractor_app_noise", c.distractor_app_noise},
                       {"distractor_min_size", c.distractor_min_size},
                       {"distractor_max_size", c.distractor_max_size}};
}

inline void from_json(const nlohmann::json& j, DetectorConfig& c)
{
    DetectorConfig d;
    c.score_noise = j.value("score_noise", d.score_noise);
    c.cost_per_component = j.value("cost_per_component", d.cost_per_component);
    c.distractor_rate = j.value("distractor_rate", d.distractor_rate);
    c.distractor_app_noise = j.value("distractor_app_noise", d.distractor_app_noise);
    c.distractor_min_size = j.value("distractor_min_size", d.distractor_min_size);
    c.distractor_max_size = j.value("distractor_max_size", d.distractor_max_size);
}

/// Shape of a forest too large to train here, used for analytic memory
/// accounting only.
struct ScaleConfig {
    double num_train = 14125;
    double d_glob = 16000;
    double num_trees = 750;
};

inline void to_json(nlohmann::json& j, const ScaleConfig& c)
{
    j = nlohmann::json{{"num_train", c.num_train}, {"d_glob", c.d_glob}, {"num_trees", c.num_trees}};
}

inline void from_json(const nlohmann::json& j, ScaleConfig& c)
{
    ScaleConfig d;
    c.num_train = j.value("num_train", d.num_train);
    c.d_glob = j.value("d_glob", d.d_glob);
    c.num_trees = j.value("num_trees", d.num_trees);
}

/// Optional dataset files; when `train` is empty the generator is used.
struct DataPaths {
    std::string train;
    std::string val;
    std::string test;
};

struct ExperimentConfig {
    /// root of every sub-seed
    std::uint64_t seed = 7;
    SynthConfig synth = [] {
        SynthConfig s;
        s.images_per_scene = 300;
        s.nuisance_dims = 16;
        s.noise_nuisance = 0.6;
        s.scene_concentration = 0.1;
        return s;
    }();
    DataPaths data;
    double test_fraction = 200.0 / 2400.0;
    /// taken from what remains after the test split
    double val_fraction = 200.0 / 2200.0;
    TrainConfig train = [] {
        TrainConfig t;
        t.num_trees = 200;
        return t;
    }();
    std::vector<PropertyKind> kinds{PropertyKind::Appearance, PropertyKind::Position, PropertyKind::Scale};
    int k_retrieval = 10;
    std::vector<int> retrieval_sizes{1, 10};
    std::vector<double> gammas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0};
    std::vector<std::pair<double, double>> weight_grid = default_weight_grid();
    DetectorConfig detector;
    double iou_threshold = 0.5;
    double nms_threshold = 0.5;
    /// rescore position and scale with one retrieval set (the position forest's)
    bool shared_retrieval = false;
    ScaleConfig large_scale;

    void validate() const
    {
        synth.validate();
        train.validate();
        if (kinds.empty() || retrieval_sizes.empty() || gammas.empty() || weight_grid.empty())
            throw Error("config: kinds, retrieval_sizes, gammas and weight_grid must be non-empty");
        for (int k : retrieval_sizes)
            if (k < 1)
                throw Error("config: retrieval sizes must be >= 1");
        for (double g : gammas)
            if (!(g >= 0.0 && g <= 1.0))
                throw Error("config: gammas must lie in [0,1]");
        if (k_retrieval < 1)
            throw Error("config: k_retrieval must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    std::vector<std::string> kinds;
    for (auto k : c.kinds)
        kinds.push_back(to_string(k));
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [p, s] : c.weight_grid)
        grid.push_back({p, s});
    j = nlohmann::json{{"seed", c.seed},
                       {"synth", c.synth},
                       {"data", {{"train", c.data.train}, {"val", c.data.val}, {"test", c.data.test}}},
                       {"test_fraction", c.test_fraction},
                       {"val_fraction", c.val_fraction},
                       {"train", c.train},
                       {"kinds", kinds},
                       {"k_retrieval", c.k_retrieval},
                       {"retrieval_sizes", c.retrieval_sizes},
                       {"gammas", c.gammas},
                       {"weight_grid", grid},
                       {"detector", c.detector},
                       {"iou_threshold", c.iou_threshold},
                       {"nms_threshold", c.nms_threshold},
                       {"shared_retrieval", c.shared_retrieval},
                       {"large_scale", c.large_scale}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    c = ExperimentConfig{};
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("synth"); it != j.end()) {
        nlohmann::json merged = c.synth;
        merged.update(*it);
        merged.get_to(c.synth);
    }
    if (auto it = j.find("data"); it != j.end()) {
        c.data.train = it->value("train", "");
        c.data.val = it->value("val", "");
        c.data.test = it->value("test", "");
    }
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (auto it = j.find("train"); it != j.end()) {
        nlohmann::json merged = c.train;
        merged.update(*it);
        merged.get_to(c.train);
    }
    if (auto it = j.find("kinds"); it != j.end()) {
        c.kinds.clear();
        for (const auto& k : *it)
            c.kinds.push_back(parse_kind(k.get<std::string>()));
    }
    c.k_retrieval = j.value("k_retrieval", c.k_retrieval);
    c.retrieval_sizes = j.value("retrieval_sizes", c.retrieval_sizes);
    c.gammas = j.value("gammas", c.gammas);
    if (auto it = j.find("weight_grid"); it != j.end()) {
        c.weight_grid.clear();
        for (const auto& w : *it) {
            if (!w.is_array() || w.size() != 2)
                throw Error("config: weight_grid entries must be [alpha_pos, alpha_scale] pairs");
            c.weight_grid.emplace_back(w[0].get<double>(), w[1].get<double>());
        }
    }
    if (auto it = j.find("detector"); it != j.end())
        it->get_to(c.detector);
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
    c.shared_retrieval = j.value("shared_retrieval", c.shared_retrieval);
    if (auto it = j.find("large_scale"); it != j.end())
        it->get_to(c.large_scale);
}

/// Hash of the canonical JSON form; identical configs hash identically.
inline std::string config_hash(const ExperimentConfig& c)
{
    return hex64(fnv1a64(nlohmann::json(c).dump()));
}

inline std::uint64_t sub_seed(const ExperimentConfig& c, std::string_view name, std::uint64_t index = 0)
{
    return derive_seed(c.seed, name, index);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct ExperimentData {
    Dataset train;
    Dataset val;
    Dataset test;
    std::optional<SynthTruth> truth;
};

/// Generates (or loads) the data and splits it into train/val/test.
inline ExperimentData prepare_data(const ExperimentConfig& cfg)
{
    cfg.validate();
    if (!cfg.data.train.empty()) {
        if (cfg.data.val.empty() || cfg.data.test.empty())
            throw Error("config: data.train, data.val and data.test must be given together");
        return {load_dataset(cfg.data.train), load_dataset(cfg.data.val), load_dataset(cfg.data.test), {}};
    }
    SynthConfig sc = cfg.synth;
    sc.seed = sub_seed(cfg, "synth");
    auto gen = synth_generate_with_truth(sc);
    auto [rest, test] = split(gen.dataset, cfg.test_fraction, sub_seed(cfg, "split/test"));
    auto [train, val] = split(rest, cfg.val_fraction, sub_seed(cfg, "split/val"));
    return {std::move(train), std::move(val), std::move(test), std::move(gen.truth)};
}

inline TrainConfig forest_config(const ExperimentConfig& cfg, PropertyKind kind)
{
    TrainConfig t = cfg.train;
    t.seed = sub_seed(cfg, "forest/" + to_string(kind));
    return t;
}

inline Forest train_kind(const ExperimentConfig& cfg, const Dataset& train, PropertyKind kind)
{
    return train_forest(train, kind, forest_config(cfg, kind), cfg.k_retrieval);
}

using ForestMap = std::map<PropertyKind, Forest>;

// ---------------------------------------------------------------------------
// Retrieval quality
// ---------------------------------------------------------------------------

struct QualityRow {
    PropertyKind kind = PropertyKind::Appearance;
    std::string method;
    int k = 0;
    double mean_quality = 0.0;
    std::size_t num_images = 0;
};

struct QualitySample {
    PropertyKind kind = PropertyKind::Appearance;
    std::string method;
    int k = 0;
    std::int64_t image_id = 0;
    double quality = 0.0;
};

struct RetrievalEvaluation {
    std::vector<QualityRow> rows;
    std::vector<QualitySample> samples;
};

/// Mean retrieval quality of all-train, kNN and forest retrieval sets for every
/// kind with a trained forest, over test images with at least one box.
inline RetrievalEvaluation eval_retrieval(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                                          const ForestMap& forests)
{
    RetrievalEvaluation out;
    const KnnIndex index(train);
    const auto all = all_train_retrieval(train);
    const auto all_boxes = gather_boxes(all, train);
    for (auto kind : cfg.kinds) {
        const auto it = forests.find(kind);
        if (it == forests.end())
            throw Error("eval-retrieval: no forest for kind " + to_string(kind));
        const Forest& forest = it->second;
        std::map<std::pair<std::string, int>, std::vector<double>> per_method;
        for (const auto& img : test.images()) {
            if (img.boxes.empty())
                continue;
            const auto votes = query(forest, img.global_features);
            const double q_all = retrieval_quality(img.boxes, all_boxes, kind, forest.sigma);
            for (int k : cfg.retrieval_sizes) {
                const auto kk = static_cast<std::size_t>(k);
                const auto conf_boxes = gather_boxes(top_k(votes, kk), train);
                const auto knn_boxes = gather_boxes(knn_retrieval(index, img.global_features, k), train);
                // a retrieval set of boxless images has zero density everywhere
                const double q_conf =
                    conf_boxes.empty() ? 0.0 : retrieval_quality(img.boxes, conf_boxes, kind, forest.sigma);
                const double q_knn =
                    knn_boxes.empty() ? 0.0 : retrieval_quality(img.boxes, knn_boxes, kind, forest.sigma);
                for (const auto& [method, q] :
                     {std::pair<std::string, double>{"all-train", q_all}, {"knn", q_knn}, {"conf", q_conf}}) {
                    per_method[{method, k}].push_back(q);
                    out.samples.push_back({kind, method, k, img.id, q});
                }
            }
        }
        for (const std::string method : {"all-train", "knn", "conf"}) {
            for (int k : cfg.retrieval_sizes) {
                const auto& v = per_method[{method, k}];
                CompensatedSum s;
                for (double q : v)
                    s += q;
                out.rows.push_back({kind, method, k, v.empty() ? 0.0 : s.value() / static_cast<double>(v.size()),
                                    v.size()});
            }
        }
    }
    return out;
}

inline const QualityRow& find_row(const RetrievalEvaluation& ev, PropertyKind kind, const std::string& method, int k)
{
    for (const auto& r : ev.rows)
        if (r.kind == kind && r.method == method && r.k == k)
            return r;
    throw Error("no retrieval row for " + to_string(kind) + "/" + method + "/k=" + std::to_string(k));
}

// ---------------------------------------------------------------------------
// Component selection
// ---------------------------------------------------------------------------

/// Detector whose templates are the mean training appearance of each
/// component.
inline MockDetector make_detector(const DetectorConfig& dc, const Dataset& train, int num_components)
{
    if (num_components < 1)
        throw Error("detector: the training set declares no components");
    MockDetector det;
    const auto C = static_cast<std::size_t>(num_components);
    const auto d = static_cast<std::size_t>(train.d_app());
    det.templates.assign(C, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(C, 0);
    for (const auto& img : train.images()) {
        for (const auto& b : img.boxes) {
            if (!b.component_id || *b.component_id < 0 || static_cast<std::size_t>(*b.component_id) >= C)
                throw Error("detector: training box without a valid component id in image " +
                            std::to_string(img.id));
            const auto c = static_cast<std::size_t>(*b.component_id);
            for (std::size_t k = 0; k < d; ++k)
                det.templates[c][k] += b.appearance[k];
            ++counts[c];
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0)
            throw Error("detector: component " + std::to_string(c) + " has no training boxes");
        for (auto& v : det.templates[c])
            v /= static_cast<double>(counts[c]);
    }
    det.score_noise = dc.score_noise;
    det.cost_per_component = dc.cost_per_component;
    det.distractor_rate = dc.distractor_rate;
    det.distractor_app_noise = dc.distractor_app_noise;
    det.distractor_min_size = dc.distractor_min_size;
    det.distractor_max_size = dc.distractor_max_size;
    return det;
}

inline int component_count(const Dataset& train)
{
    if (train.num_components() > 0)
        return train.num_components();
    int c = 0;
    for (const auto& img : train.images())
        for (const auto& b : img.boxes)
            if (b.component_id)
                c = std::max(c, *b.component_id + 1);
    return c;
}

/// Components run on one test image by one method at one sweep point.
struct ImageSelection {
    std::string method;
    /// gamma for posterior methods, target fraction for the random baseline
    double parameter = 0.0;
    std::int64_t image_id = 0;
    std::vector<int> components;
};

struct SweepPoint {
    std::string method;
    double parameter = 0.0;
    double mean_fraction = 0.0;
    double total_cost = 0.0;
    double ap = 0.0;
    double ap_ratio = 0.0;
};

struct SelectionSweep {
    double full_ap = 0.0;
    double full_cost = 0.0;
    std::vector<SweepPoint> points;
    std::vector<ImageSelection> selections;
    std::vector<SpeedupRow> speedup;

    std::vector<SweepPoint> method(const std::string& name) const
    {
        std::vector<SweepPoint> out;
        for (const auto& p : points)
            if (p.method == name)
                out.push_back(p);
        return out;
    }
};

/// Runs the detector with the given per-image component sets and scores the
/// NMS-filtered output. Used both by the sweep and to replay saved selections.
inline std::pair<APResult, double> run_selection(const ExperimentConfig& cfg, const MockDetector& det,
                                                 const Dataset& test,
                                                 const std::map<std::int64_t, std::vector<int>>& active)
{
    std::vector<Detection> dets;
    double cost = 0.0;
    const auto seed = sub_seed(cfg, "detector");
    for (const auto& img : test.images()) {
        const auto it = active.find(img.id);
        if (it == active.end())
            throw Error("selection: no component set for test image " + std::to_string(img.id));
        auto run = run_detector(det, img, std::set<int>(it->second.begin(), it->second.end()), seed);
        cost += run.cost;
        dets.insert(dets.end(), run.detections.begin(), run.detections.end());
    }
    return {evaluate_ap(nms(std::move(dets), cfg.nms_threshold), test, cfg.iou_threshold), cost};
}

/// `count` distinct components chosen without looking at the image.
inline std::vector<int> random_components(const ExperimentConfig& cfg, int num_components, std::size_t point,
                                          std::int64_t image_id, int count)
{
    std::vector<int> all(static_cast<std::size_t>(num_components));
    std::iota(all.begin(), all.end(), 0);
    Rng rng(derive_seed(sub_seed(cfg, "random-select", point), "image", static_cast<std::uint64_t>(image_id)));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(count));
    std::sort(all.begin(), all.end());
    return all;
}

/// Gamma sweep for forest and kNN posteriors, the full model, and a random
/// baseline evaluated at the forest's mean component fraction of every gamma.
inline SelectionSweep select_sweep(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                                   const Forest& appearance_forest)
{
    const int C = component_count(train);
    const auto det = make_detector(cfg.detector, train, C);
    const KnnIndex index(train);
    SelectionSweep out;

    std::map<std::int64_t, std::vector<int>> full;
    std::vector<int> every(static_cast<std::size_t>(C));
    std::iota(every.begin(), every.end(), 0);
    for (const auto& img : test.images())
        full[img.id] = every;
    const auto [full_res, full_cost] = run_selection(cfg, det, test, full);
    out.full_ap = full_res.ap;
    out.full_cost = full_cost;
    out.points.push_back({"full", 1.0, 1.0, full_cost, full_res.ap, 1.0});

    std::map<std::int64_t, ComponentDistribution> post_conf, post_knn;
    for (const auto& img : test.images()) {
        auto safe_posterior = [&](const RetrievalSet& r) {
            try {
                return posterior(r, train, C);
            } catch (const Error&) {
                // no evidence at all: fall back to a uniform posterior
                ComponentDistribution u;
                u.probs.assign(static_cast<std::size_t>(C), 1.0 / C);
                return u;
            }
        };
        post_conf[img.id] = safe_posterior(retrieval_set(appearance_forest, img.global_features, cfg.k_retrieval));
        post_knn[img.id] = safe_posterior(knn_retrieval(index, img.global_features, cfg.k_retrieval));
    }

    std::vector<SpeedupInput> speedup_in;
    auto sweep_posterior = [&](const std::string& name, const std::map<std::int64_t, ComponentDistribution>& posts) {
        for (double g : cfg.gammas) {
            std::map<std::int64_t, std::vector<int>> active;
            std::vector<std::size_t> counts;
            for (const auto& img : test.images()) {
                auto sel = select_components(posts.at(img.id), g).selected;
                std::sort(sel.begin(), sel.end());
                counts.push_back(sel.size());
                out.selections.push_back({name, g, img.id, sel});
                active[img.id] = std::move(sel);
            }
            const auto [res, cost] = run_selection(cfg, det, test, active);
            SpeedupInput in{g, counts, cost, res};
            const auto row = speedup_report({in}, C, out.full_ap).front();
            out.points.push_back({name, g, row.mean_fraction, cost, res.ap, row.ap_ratio});
            if (name == "conf")
                speedup_in.push_back(std::move(in));
        }
    };
    sweep_posterior("conf", post_conf);
    sweep_posterior("knn", post_knn);
    out.speedup = speedup_report(speedup_in, C, out.full_ap);

    const auto conf_points = out.method("conf");
    for (std::size_t i = 0; i < conf_points.size(); ++i) {
        const double f = conf_points[i].mean_fraction;
        const int m = std::clamp(static_cast<int>(std::ceil(f * C - 1e-9)), 1, C);
        std::map<std::int64_t, std::vector<int>> active;
        for (const auto& img : test.images()) {
            auto sel = random_components(cfg, C, i, img.id, m);
            out.selections.push_back({"random", f, img.id, sel});
            active[img.id] = std::move(sel);
        }
        const auto [res, cost] = run_selection(cfg, det, test, active);
        out.points.push_back({"random", f, static_cast<double>(m) / C, cost, res.ap,
                              out.full_ap > 0.0 ? res.ap / out.full_ap : 0.0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rescoring
// ---------------------------------------------------------------------------

struct RescoreRow {
    std::string method;
    CombineWeights weights;
    double val_ap = 0.0;
    double test_ap = 0.0;
};

struct RescoredDetection {
    std::string method;
    ScoredDetection scored;
    double combined = 0.0;
};

struct RescoreResult {
    std::vector<RescoreRow> rows;
    std::vector<RescoredDetection> detections;

    const RescoreRow& row(const std::string& method) const
    {
        for (const auto& r : rows)
            if (r.method == method)
                return r;
        throw Error("no rescore row '" + method + "'");
    }
};

/// Full-model detections on `ds` with location scores from a retrieval
/// method: "conf" uses the position and scale forests, "knn" the nearest
/// training images. Empty retrieval sets give zero location scores.
inline std::vector<ScoredDetection> score_detections(const ExperimentConfig& cfg, const MockDetector& det,
                                                     const Dataset& train, const Dataset& ds,
                                                     const std::string& method, const Forest& pos_forest,
                                                     const Forest& scale_forest, const KnnIndex& index)
{
    const int C = det.num_components();
    std::set<int> every;
    for (int c = 0; c < C; ++c)
        every.insert(c);
    std::vector<ScoredDetection> out;
    for (const auto& img : ds.images()) {
        auto run = run_detector(det, img, every, sub_seed(cfg, "detector"));
        std::vector<ObjectBox> pos_boxes, scale_boxes;
        if (method == "conf") {
            pos_boxes = gather_boxes(retrieval_set(pos_forest, img.global_features, cfg.k_retrieval), train);
            scale_boxes = cfg.shared_retrieval
                              ? pos_boxes
                              : gather_boxes(retrieval_set(scale_forest, img.global_features, cfg.k_retrieval), train);
        } else if (method == "knn") {
            pos_boxes = gather_boxes(knn_retrieval(index, img.global_features, cfg.k_retrieval), train);
            scale_boxes = pos_boxes;
        } else {
            throw Error("unknown rescoring method '" + method + "'");
        }
        std::vector<LocationScore> loc(run.detections.size());
        if (!pos_boxes.empty() && !scale_boxes.empty())
            loc = location_scores(run.detections, pos_boxes, scale_boxes, pos_forest.sigma, scale_forest.sigma);
        for (std::size_t i = 0; i < run.detections.size(); ++i)
            out.push_back({std::move(run.detections[i]), loc[i]});
    }
    return out;
}

inline double rescored_ap(const ExperimentConfig& cfg, const Dataset& ds, std::span<const ScoredDetection> dets,
                          const CombineWeights& w)
{
    return evaluate_ap(nms(apply_weights(dets, w), cfg.nms_threshold), ds, cfg.iou_threshold).ap;
}

/// Unaugmented AP, then forest- and kNN-augmented AP with weights fitted on the
/// validation split, plus the forest pipeline with zero weights.
inline RescoreResult rescore(const ExperimentConfig& cfg, const Dataset& train, const Dataset& val,
                             const Dataset& test, const Forest& pos_forest, const Forest& scale_forest)
{
    if (pos_forest.kind != PropertyKind::Position || scale_forest.kind != PropertyKind::Scale)
        throw Error("rescore: expected a position and a scale forest");
    const auto det = make_detector(cfg.detector, train, component_count(train));
    const KnnIndex index(train);
    RescoreResult out;

    bool baseline_done = false;
    for (const std::string method : {"conf", "knn"}) {
        const auto val_dets = score_detections(cfg, det, train, val, method, pos_forest, scale_forest, index);
        const auto test_dets = score_detections(cfg, det, train, test, method, pos_forest, scale_forest, index);
        if (!baseline_done) {
            out.rows.push_back({"none", {}, rescored_ap(cfg, val, val_dets, {}), rescored_ap(cfg, test, test_dets, {})});
            baseline_done = true;
        }
        const auto w = fit_weights(val, val_dets, cfg.weight_grid, cfg.iou_threshold, cfg.nms_threshold);
        out.rows.push_back({method, w, rescored_ap(cfg, val, val_dets, w), rescored_ap(cfg, test, test_dets, w)});
        if (method == "conf")
            out.rows.push_back({"conf-zero-weights", {}, rescored_ap(cfg, val, val_dets, {}),
                                rescored_ap(cfg, test, test_dets, {})});
        for (const auto& s : test_dets)
            out.detections.push_back({method, s, combine(s.det, s.loc.pos, s.loc.scale, w)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cost benchmark
// ---------------------------------------------------------------------------

struct ForestBench {
    PropertyKind kind = PropertyKind::Appearance;
    std::size_t max_node_visits = 0;
    double mean_node_visits = 0.0;
    std::size_t visit_bound = 0;
    std::size_t box_distance_computations = 0;
    MemoryFootprint footprint;
    double mean_leaf_size = 0.0;
};

struct BenchReport {
    std::size_t num_train = 0;
    std::size_t num_probes = 0;
    /// kNN distance computations per probe, as measured by the index counter
    std::vector<std::uint64_t> knn_distances_per_probe;
    double knn_matrix_bytes = 0.0;
    std::vector<ForestBench> forests;

    // analytic extrapolation to the large configuration
    double scale_knn_bytes = 0.0;
    /// worst case: every leaf holds exactly min_images_per_leaf images
    double scale_forest_bytes_bound = 0.0;
    /// internal nodes from the measured mean leaf size
    double scale_forest_bytes_estimate = 0.0;
    double scale_ratio_bound = 0.0;
    double scale_ratio_estimate = 0.0;
};

inline BenchReport bench(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                         const ForestMap& forests)
{
    BenchReport r;
    r.num_train = train.size();
    r.num_probes = test.size();
    KnnIndex index(train);
    r.knn_matrix_bytes = knn_matrix_bytes(static_cast<double>(train.size()), train.d_glob());
    for (const auto& img : test.images()) {
        const auto before = index.distance_computations();
        (void)knn_retrieval(index, img.global_features, cfg.k_retrieval);
        r.knn_distances_per_probe.push_back(index.distance_computations() - before);
    }

    double leaf_images = 0.0, leaves = 0.0;
    std::size_t min_leaf = static_cast<std::size_t>(cfg.train.min_images_per_leaf);
    for (const auto& [kind, forest] : forests) {
        ForestBench fb;
        fb.kind = kind;
        fb.visit_bound = forest.trees.size() * static_cast<std::size_t>(forest.config.max_depth);
        std::size_t total = 0;
        for (const auto& img : test.images()) {
            QueryStats stats;
            (void)retrieval_set(forest, img.global_features, {}, &stats);
            fb.max_node_visits = std::max(fb.max_node_visits, stats.node_visits);
            fb.box_distance_computations += stats.box_distance_computations;
            total += stats.node_visits;
        }
        fb.mean_node_visits = test.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(test.size());
        fb.footprint = memory_footprint(forest);
        double li = 0.0, lv = 0.0;
        for (const auto& t : forest.trees) {
            li += static_cast<double>(t.leaf_ids.size());
            lv += static_cast<double>(t.num_leaves());
        }
        fb.mean_leaf_size = lv > 0.0 ? li / lv : 0.0;
        leaf_images += li;
        leaves += lv;
        min_leaf = static_cast<std::size_t>(forest.config.min_images_per_leaf);
        r.forests.push_back(fb);
    }

    const auto& ps = cfg.large_scale;
    r.scale_knn_bytes = knn_matrix_bytes(ps.num_train, ps.d_glob);
    const double bound_internal = std::floor(ps.num_train / static_cast<double>(min_leaf)) - 1.0;
    r.scale_forest_bytes_bound = footprint_bytes(ps.num_trees, std::max(bound_internal, 0.0), ps.num_train);
    const double mean_leaf = leaves > 0.0 ? leaf_images / leaves : static_cast<double>(min_leaf);
    r.scale_forest_bytes_estimate =
        footprint_bytes(ps.num_trees, std::max(ps.num_train / mean_leaf - 1.0, 0.0), ps.num_train);
    r.scale_ratio_bound = r.scale_knn_bytes / r.scale_forest_bytes_bound;
    r.scale_ratio_estimate = r.scale_knn_bytes / r.scale_forest_bytes_estimate;
    return r;
}

inline nlohmann::json to_json_report(const BenchReport& r, const std::string& hash)
{
    nlohmann::json forests = nlohmann::json::array();
    for (const auto& f : r.forests) {
        forests.push_back({{"kind", to_string(f.kind)},
                           {"max_node_visits", f.max_node_visits},
                           {"mean_node_visits", f.mean_node_visits},
                           {"node_visit_bound", f.visit_bound},
                           {"box_distance_computations", f.box_distance_computations},
                           {"internal_bytes", f.footprint.internal_bytes},
                           {"leaf_bytes", f.footprint.leaf_bytes},
                           {"total_bytes", f.footprint.total},
                           {"mean_internal_nodes_per_tree", f.footprint.mean_internal_nodes_per_tree},
                           {"mean_leaf_size", f.mean_leaf_size}});
    }
    return {{"config_hash", hash},
            {"num_train", r.num_train},
            {"num_probes", r.num_probes},
            {"knn_distances_per_probe", r.knn_distances_per_probe},
            {"knn_matrix_bytes", r.knn_matrix_bytes},
            {"forests", forests},
            {"large_scale",
             {{"knn_bytes", r.scale_knn_bytes},
              {"forest_bytes_bound", r.scale_forest_bytes_bound},
              {"forest_bytes_estimate", r.scale_forest_bytes_estimate},
              {"ratio_bound", r.scale_ratio_bound},
              {"ratio_estimate", r.scale_ratio_estimate}}}};
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

namespace detail {

inline std::ostream& exact(std::ostream& os)
{
    return os << std::setprecision(std::numeric_limits<double>::max_digits10);
}

inline std::string join_ints(const std::vector<int>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? " " : "") + std::to_string(v[i]);
    return s;
}

} // namespace detail

inline void write_quality_csv(std::ostream& os, const std::vector<QualityRow>& rows, const std::string& hash)
{
    detail::exact(os) << "kind,method,k,mean_quality,num_images,config_hash\n";
    for (const auto& r : rows)
        os << to_string(r.kind) << ',' << r.method << ',' << r.k << ',' << r.mean_quality << ',' << r.num_images
           << ',' << hash << '\n';
}

inline void write_quality_samples_csv(std::ostream& os, const std::vector<QualitySample>& rows,
                                      const std::string& hash)
{
    detail::exact(os) << "kind,method,k,image_id,quality,config_hash\n";
    for (const auto& r : rows)
        os << to_string(r.kind) << ',' << r.method << ',' << r.k << ',' << r.image_id << ',' << r.quality << ','
           << hash << '\n';
}

inline void write_sweep_csv(std::ostream& os, const SelectionSweep& s, const std::string& hash)
{
    detail::exact(os) << "method,parameter,mean_component_fraction,total_cost,ap,ap_ratio_vs_full,config_hash\n";
    for (const auto& p : s.points)
        os << p.method << ',' << p.parameter << ',' << p.mean_fraction << ',' << p.total_cost << ',' << p.ap << ','
           << p.ap_ratio << ',' << hash << '\n';
}

inline void write_selections_csv(std::ostream& os, const std::vector<ImageSelection>& sel, const std::string& hash)
{
    detail::exact(os) << "method,parameter,image_id,components,config_hash\n";
    for (const auto& s : sel)
        os << s.method << ',' << s.parameter << ',' << s.image_id << ',' << detail::join_ints(s.components) << ','
           << hash << '\n';
}

inline void write_rescore_csv(std::ostream& os, const RescoreResult& r, const std::string& hash)
{
    detail::exact(os) << "method,alpha_pos,alpha_scale,val_ap,test_ap,config_hash\n";
    for (const auto& row : r.rows)
        os << row.method << ',' << row.weights.alpha_pos << ',' << row.weights.alpha_scale << ',' << row.val_ap
           << ',' << row.test_ap << ',' << hash << '\n';
}

inline void write_rescored_detections_csv(std::ostream& os, const RescoreResult& r, const std::string& hash)
{
    detail::exact(os) << "method,image_id,cx,cy,w,h,detector_score,pos_score,scale_score,combined_score,config_hash\n";
    for (const auto& d : r.detections) {
        const auto& s = d.scored;
        os << d.method << ',' << s.det.image_id << ',' << s.det.box.cx << ',' << s.det.box.cy << ',' << s.det.box.w
           << ',' << s.det.box.h << ',' << s.det.detector_score << ',' << s.loc.pos << ',' << s.loc.scale << ','
           << d.combined << ',' << hash << '\n';
    }
}

} // namespace conf
