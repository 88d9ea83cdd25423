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

#pragma once

#include "dataset.hpp"

#include <istream>
#include <ostream>
#include <tuple>
#include <vector>

namespace conf {

/// A scored window. Only the geometry of `box` is meaningful.
struct Detection {
    ObjectBox box;
    double detector_score = 0.0;
    std::optional<int> component_id;
    std::int64_t image_id = 0;
};

/// Intersection over union of two center/size boxes in image fractions.
inline double iou(const ObjectBox& a, const ObjectBox& b)
{
    const double ax0 = a.cx - 0.5 * a.w, ax1 = a.cx + 0.5 * a.w;
    const double ay0 = a.cy - 0.5 * a.h, ay1 = a.cy + 0.5 * a.h;
    const double bx0 = b.cx - 0.5 * b.w, bx1 = b.cx + 0.5 * b.w;
    const double by0 = b.cy - 0.5 * b.h, by1 = b.cy + 0.5 * b.h;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Total order used wherever detections are ranked: score descending, then
/// image id and box coordinates ascending.
inline bool ranks_before(const Detection& a, const Detection& b)
{
    if (a.detector_score != b.detector_score)
        return a.detector_score > b.detector_score;
    return std::tie(a.image_id, a.box.cx, a.box.cy, a.box.w, a.box.h) <
           std::tie(b.image_id, b.box.cx, b.box.cy, b.box.w, b.box.h);
}

inline void write_detections(std::ostream& os, const std::vector<Detection>& dets)
{
    for (const auto& d : dets) {
        nlohmann::json j;
        j["image_id"] = d.image_id;
        j["cx"] = d.box.cx;
        j["cy"] = d.box.cy;
        j["w"] = d.box.w;
        j["h"] = d.box.h;
        j["score"] = d.detector_score;
        j["component"] = d.component_id ? nlohmann::json(*d.component_id) : nlohmann::json(nullptr);
        os << j.dump() << '\n';
    }
}

inline std::vector<Detection> read_detections(std::istream& is)
{
    std::vector<Detection> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error("detections line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
        }
        Detection d;
        try {
            d.image_id = j.at("image_id").get<std::int64_t>();
            d.box.cx = j.at("cx").get<double>();
            d.box.cy = j.at("cy").get<double>();
            d.box.w = j.at("w").get<double>();
            d.box.h = j.at("h").get<double>();
            d.detector_score = j.at("score").get<double>();
            if (auto c = j.find("component"); c != j.end() && !c->is_null())
                d.component_id = c->get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw Error("detections line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!valid_geometry(d.box))
            throw Error("detections line " + std::to_string(lineno) + ": box geometry outside [0,1]");
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace conf
