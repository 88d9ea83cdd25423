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

// Detection rescoring with location and scale likelihoods estimated from the
// boxes of a retrieval set, followed by non-maxima suppression.

#pragma once

#include "detection.hpp"
#include "metrics.hpp"
#include "mockdet.hpp"

#include <algorithm>
#include <map>
#include <span>
#include <tuple>
#include <vector>

namespace conf {

struct CombineWeights {
    double alpha_pos = 0.0;
    double alpha_scale = 0.0;

    bool operator==(const CombineWeights&) const = default;
};

struct LocationScore {
    double pos = 0.0;
    double scale = 0.0;
};

/// Density of the retrieved boxes at every detection, under D_POS and D_SCALE.
/// Position and scale may come from different retrieval sets.
inline std::vector<LocationScore> location_scores(std::span<const Detection> dets,
                                                  std::span<const ObjectBox> retr_pos_boxes,
                                                  std::span<const ObjectBox> retr_scale_boxes,
                                                  const SigmaParams& sigma_pos, const SigmaParams& sigma_scale)
{
    if (retr_pos_boxes.empty() || retr_scale_boxes.empty())
        throw Error("location_scores: empty retrieval box set");
    std::vector<LocationScore> out;
    out.reserve(dets.size());
    for (const auto& d : dets)
        out.push_back({kde_window_score(d.box, retr_pos_boxes, PropertyKind::Position, sigma_pos),
                       kde_window_score(d.box, retr_scale_boxes, PropertyKind::Scale, sigma_scale)});
    return out;
}

inline std::vector<LocationScore> location_scores(std::span<const Detection> dets,
                                                  std::span<const ObjectBox> retr_boxes,
                                                  const SigmaParams& sigma_pos, const SigmaParams& sigma_scale)
{
    return location_scores(dets, retr_boxes, retr_boxes, sigma_pos, sigma_scale);
}

inline double combine(const Detection& det, double pos_score, double scale_score, const CombineWeights& wts)
{
    return det.detector_score + wts.alpha_pos * pos_score + wts.alpha_scale * scale_score;
}

/// Greedy per-image suppression: a detection survives iff its IoU with every
/// higher-ranked survivor of the same image is <= iou_threshold. Output is in
/// rank order.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.5)
{
    std::sort(dets.begin(), dets.end(), ranks_before);
    std::vector<Detection> kept;
    std::map<std::int64_t, std::vector<std::size_t>> kept_by_image;
    for (auto& d : dets) {
        auto& same = kept_by_image[d.image_id];
        const bool keep = std::all_of(same.begin(), same.end(),
                                      [&](std::size_t k) { return iou(kept[k].box, d.box) <= iou_threshold; });
        if (keep) {
            same.push_back(kept.size());
            kept.push_back(std::move(d));
        }
    }
    return kept;
}

struct ScoredDetection {
    Detection det;
    LocationScore loc;
};

inline std::vector<Detection> apply_weights(std::span<const ScoredDetection> dets, const CombineWeights& wts)
{
    std::vector<Detection> out;
    out.reserve(dets.size());
    for (const auto& s : dets) {
        Detection d = s.det;
        d.detector_score = combine(s.det, s.loc.pos, s.loc.scale, wts);
        out.push_back(std::move(d));
    }
    return out;
}

inline std::vector<std::pair<double, double>> default_weight_grid()
{
    static constexpr double values[] = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<std::pair<double, double>> grid;
    for (double p : values)
        for (double s : values)
            grid.emplace_back(p, s);
    return grid;
}

/// Exhaustive grid search for the weights maximizing AP (after NMS) on a
/// validation set. Equal APs resolve toward the smaller weight sum, then the
/// smaller alpha_pos, so the result does not depend on grid order.
inline CombineWeights fit_weights(const Dataset& val, std::span<const ScoredDetection> dets,
                                  const std::vector<std::pair<double, double>>& grid, double iou_threshold = 0.5,
                                  double nms_threshold = 0.5)
{
    if (grid.empty())
        throw Error("fit_weights: empty weight grid");
    CombineWeights best;
    double best_ap = -1.0;
    bool have = false;
    for (const auto& [p, s] : grid) {
        const CombineWeights w{p, s};
        const double ap = evaluate_ap(nms(apply_weights(dets, w), nms_threshold), val, iou_threshold).ap;
        const bool better =
            !have || ap > best_ap ||
            (ap == best_ap && std::make_tuple(p + s, p, s) < std::make_tuple(best.alpha_pos + best.alpha_scale,
                                                                              best.alpha_pos, best.alpha_scale));
        if (better) {
            best = w;
            best_ap = ap;
            have = true;
        }
    }
    return best;
}

} // namespace conf
