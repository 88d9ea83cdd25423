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

// A stand-in multi-component detector with a per-component cost model, and
// VOC-style average precision.

#pragma once

#include "common.hpp"
#include "dataset.hpp"
#include "detection.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <vector>

namespace conf {

struct MockDetector {
    /// one appearance prototype per component id
    std::vector<std::vector<double>> templates;
    double score_noise = 0.05;
    /// abstract time units per image per component run
    double cost_per_component = 1.0;
    /// distractor windows per image on top of the ground truth
    int distractor_rate = 20;
    /// spread of a distractor's appearance around a random template
    double distractor_app_noise = 0.3;
    double distractor_min_size = 0.05;
    double distractor_max_size = 0.45;

    int num_components() const { return static_cast<int>(templates.size()); }
};

struct DetectorRun {
    std::vector<Detection> detections;
    double cost = 0.0;
};

/// Runs the components in `active` on `img`. Candidate windows are the
/// ground-truth boxes followed by `distractor_rate` random windows; each
/// candidate yields one detection from its best-scoring active component.
/// All randomness is drawn independently of `active`, so dropping a component
/// only changes which component wins a candidate.
inline DetectorRun run_detector(const MockDetector& det, const ImageRecord& img, const std::set<int>& active,
                                std::uint64_t seed)
{
    const int C = det.num_components();
    for (int c : active)
        if (c < 0 || c >= C)
            throw Error("run_detector: unknown component id " + std::to_string(c));
    DetectorRun run;
    run.cost = static_cast<double>(active.size()) * det.cost_per_component;
    if (active.empty())
        return run;

    Rng rng(derive_seed(seed, "detector/image", static_cast<std::uint64_t>(img.id)));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, C - 1);

    std::vector<ObjectBox> candidates = img.boxes;
    for (int i = 0; i < det.distractor_rate; ++i) {
        ObjectBox b;
        b.cx = u01(rng);
        b.cy = u01(rng);
        b.w = det.distractor_min_size + (det.distractor_max_size - det.distractor_min_size) * u01(rng);
        b.h = det.distractor_min_size + (det.distractor_max_size - det.distractor_min_size) * u01(rng);
        b.appearance = det.templates[static_cast<std::size_t>(pick(rng))];
        for (auto& a : b.appearance)
            a += det.distractor_app_noise * n01(rng);
        candidates.push_back(std::move(b));
    }

    std::vector<double> noise(static_cast<std::size_t>(C));
    for (const auto& cand : candidates) {
        for (auto& v : noise)
            v = det.score_noise * n01(rng);
        double best = -std::numeric_limits<double>::infinity();
        int best_c = -1;
        for (int c : active) {
            const auto& t = det.templates[static_cast<std::size_t>(c)];
            if (t.size() != cand.appearance.size())
                throw Error("run_detector: template dimension does not match appearance dimension");
            double s = 0.0;
            for (std::size_t k = 0; k < t.size(); ++k)
                s += (cand.appearance[k] - t[k]) * (cand.appearance[k] - t[k]);
            const double score = -std::sqrt(s) + noise[static_cast<std::size_t>(c)];
            if (score > best) {
                best = score;
                best_c = c;
            }
        }
        Detection d;
        d.box = cand;
        d.box.appearance.clear();
        d.box.component_id.reset();
        d.detector_score = best;
        d.component_id = best_c;
        d.image_id = img.id;
        run.detections.push_back(std::move(d));
    }
    return run;
}

struct APResult {
    double ap = 0.0;
    /// PR curve after the precision envelope, one point per ranked detection
    std::vector<double> recall;
    std::vector<double> precision;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t num_ground_truth = 0;
};

/// Continuous (area-under-envelope) average precision. A detection is a true
/// positive when its best-overlapping ground truth box in the same image has
/// IoU >= threshold and was not already claimed; otherwise it is a false
/// positive.
inline APResult evaluate_ap(std::vector<Detection> dets, const Dataset& gt, double iou_threshold = 0.5)
{
    APResult res;
    res.num_ground_truth = gt.num_boxes();
    std::sort(dets.begin(), dets.end(), ranks_before);

    std::vector<std::vector<bool>> claimed(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i)
        claimed[i].assign(gt[i].boxes.size(), false);

    std::vector<int> is_tp(dets.size(), 0);
    for (std::size_t k = 0; k < dets.size(); ++k) {
        const auto idx = gt.index_of(dets[k].image_id);
        if (!idx)
            throw Error("evaluate_ap: detection references unknown image " + std::to_string(dets[k].image_id));
        const auto& boxes = gt[*idx].boxes;
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < boxes.size(); ++j) {
            const double o = iou(dets[k].box, boxes[j]);
            if (o > best) {
                best = o;
                best_j = j;
            }
        }
        if (best >= iou_threshold && !claimed[*idx][best_j]) {
            claimed[*idx][best_j] = true;
            is_tp[k] = 1;
        }
    }

    const double npos = static_cast<double>(res.num_ground_truth);
    res.recall.resize(dets.size());
    res.precision.resize(dets.size());
    double tp = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < dets.size(); ++k) {
        (is_tp[k] ? tp : fp) += 1.0;
        res.recall[k] = npos > 0.0 ? tp / npos : 0.0;
        res.precision[k] = tp / (tp + fp);
    }
    res.true_positives = static_cast<std::size_t>(tp);
    res.false_positives = static_cast<std::size_t>(fp);
    for (std::size_t k = dets.size(); k-- > 1;)
        res.precision[k - 1] = std::max(res.precision[k - 1], res.precision[k]);
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < dets.size(); ++k) {
        res.ap += (res.recall[k] - prev_recall) * res.precision[k];
        prev_recall = res.recall[k];
    }
    return res;
}

struct SpeedupInput {
    double gamma = 1.0;
    /// number of components run, per test image
    std::vector<std::size_t> active_counts;
    double cost = 0.0;
    APResult ap;
};

struct SpeedupRow {
    double gamma = 1.0;
    double mean_fraction = 1.0;
    double total_cost = 0.0;
    double ap = 0.0;
    double ap_ratio = 1.0;
};

/// One row per run, ordered by gamma; ap_ratio is relative to `full_ap`.
inline std::vector<SpeedupRow> speedup_report(const std::vector<SpeedupInput>& runs, int num_components,
                                              double full_ap)
{
    std::vector<SpeedupRow> rows;
    for (const auto& r : runs) {
        SpeedupRow row;
        row.gamma = r.gamma;
        double sum = 0.0;
        for (auto c : r.active_counts)
            sum += static_cast<double>(c);
        row.mean_fraction =
            r.active_counts.empty() ? 0.0 : sum / static_cast<double>(r.active_counts.size()) / num_components;
        row.total_cost = r.cost;
        row.ap = r.ap.ap;
        row.ap_ratio = full_ap > 0.0 ? r.ap.ap / full_ap : 0.0;
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SpeedupRow& a, const SpeedupRow& b) { return a.gamma < b.gamma; });
    return rows;
}

inline void write_speedup_csv(std::ostream& os, const std::vector<SpeedupRow>& rows, const std::string& config_hash)
{
    os << "gamma,mean_component_fraction,total_cost,ap,ap_ratio_vs_full,config_hash\n";
    for (const auto& r : rows)
        os << r.gamma << ',' << r.mean_fraction << ',' << r.total_cost << ',' << r.ap << ',' << r.ap_ratio << ','
           << config_hash << '\n';
}

} // namespace conf
