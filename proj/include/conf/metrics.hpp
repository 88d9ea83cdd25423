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

// Box distances and the Gaussian kernel density quantities built on them:
// bandwidth estimation, set compactness, window likelihood and
// retrieval quality.

#pragma once

#include "common.hpp"
#include "dataset.hpp"

#include <algorithm>
#include <span>
#include <string>
#include <vector>

namespace conf {

enum class PropertyKind : std::uint8_t { Appearance = 0, Position = 1, Scale = 2 };

inline constexpr PropertyKind kAllKinds[] = {PropertyKind::Appearance, PropertyKind::Position,
                                             PropertyKind::Scale};

inline std::string to_string(PropertyKind k)
{
    switch (k) {
    case PropertyKind::Appearance:
        return "appearance";
    case PropertyKind::Position:
        return "position";
    case PropertyKind::Scale:
        return "scale";
    }
    throw Error("invalid property kind");
}

inline PropertyKind parse_kind(const std::string& s)
{
    if (s == "appearance")
        return PropertyKind::Appearance;
    if (s == "position")
        return PropertyKind::Position;
    if (s == "scale")
        return PropertyKind::Scale;
    throw Error("unknown property kind '" + s + "'");
}

struct SigmaParams {
    double sigma = 1.0;
    PropertyKind kind = PropertyKind::Appearance;
    int k_nn = 10;
    /// set when the estimate collapsed to zero and kDegenerateSigma was used
    bool degenerate = false;

    bool operator==(const SigmaParams&) const = default;
};

inline constexpr double kDegenerateSigma = 1e-6;

inline double distance(PropertyKind kind, const ObjectBox& a, const ObjectBox& b)
{
    switch (kind) {
    case PropertyKind::Appearance: {
        if (a.appearance.size() != b.appearance.size())
            throw Error("appearance dimension mismatch: " + std::to_string(a.appearance.size()) +
                        " vs " + std::to_string(b.appearance.size()));
        double s = 0.0;
        for (std::size_t i = 0; i < a.appearance.size(); ++i) {
            const double d = a.appearance[i] - b.appearance[i];
            s += d * d;
        }
        return std::sqrt(s);
    }
    case PropertyKind::Position: {
        const double dx = a.cx - b.cx;
        const double dy = a.cy - b.cy;
        return std::sqrt(dx * dx + dy * dy);
    }
    case PropertyKind::Scale:
        return std::max(a.h / b.h, b.h / a.h) * std::max(a.w / b.w, b.w / a.w);
    }
    throw Error("invalid property kind");
}

/// Unnormalized Gaussian kernel exp(-d^2 / (2 sigma^2)).
inline double gaussian_kernel(double d, double sigma)
{
    return std::exp(-0.5 * (d * d) / (sigma * sigma));
}

/// 1 / (sigma^2 sqrt(2 pi)), the constant shared by all density scores.
inline double kernel_normalizer(double sigma)
{
    return kInvSqrt2Pi / (sigma * sigma);
}

/// Bandwidth for `kind`. For every box, the spread of its k_nn nearest other
/// boxes around it, sqrt(mean D^2) over those neighbours; sigma is the median
/// of these spreads over all boxes.
inline SigmaParams estimate_sigma(std::span<const ObjectBox> boxes, PropertyKind kind, int k_nn = 10)
{
    if (k_nn < 1)
        throw Error("k_nn must be >= 1");
    if (boxes.size() < static_cast<std::size_t>(k_nn) + 1)
        throw Error("sigma estimation needs at least k_nn+1 = " + std::to_string(k_nn + 1) +
                    " boxes, got " + std::to_string(boxes.size()));
    const std::size_t n = boxes.size();
    const auto k = static_cast<std::size_t>(k_nn);
    std::vector<double> spreads(n);
    std::vector<double> dists(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                dists[m++] = distance(kind, boxes[i], boxes[j]);
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k - 1), dists.end());
        // the k smallest now occupy [0, k) in some order; sort for a stable sum
        std::sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k));
        double second_moment = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            second_moment += dists[j] * dists[j];
        spreads[i] = std::sqrt(second_moment / static_cast<double>(k));
    }
    std::sort(spreads.begin(), spreads.end());
    const double median = n % 2 == 1 ? spreads[n / 2] : 0.5 * (spreads[n / 2 - 1] + spreads[n / 2]);

    SigmaParams out;
    out.kind = kind;
    out.k_nn = k_nn;
    if (!(median > 0.0) || !std::isfinite(median)) {
        out.sigma = kDegenerateSigma;
        out.degenerate = true;
    } else {
        out.sigma = median;
    }
    return out;
}

/// Kernel density compactness of a box set (leave-one-out pairs, 1/N^2).
/// Zero for fewer than two boxes.
inline double compactness(std::span<const ObjectBox> boxes, PropertyKind kind, const SigmaParams& sigma)
{
    const std::size_t n = boxes.size();
    if (n <= 1)
        return 0.0;
    CompensatedSum sum;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                sum += gaussian_kernel(distance(kind, boxes[i], boxes[j]), sigma.sigma);
    const double nn = static_cast<double>(n);
    return sum.value() * kernel_normalizer(sigma.sigma) / (nn * nn);
}

/// Density of the reference boxes evaluated at window `w`.
inline double kde_window_score(const ObjectBox& w, std::span<const ObjectBox> ref_boxes, PropertyKind kind,
                               const SigmaParams& sigma)
{
    if (ref_boxes.empty())
        throw Error("kde_window_score: empty reference box set");
    CompensatedSum sum;
    for (const auto& r : ref_boxes)
        sum += gaussian_kernel(distance(kind, w, r), sigma.sigma);
    return sum.value() * kernel_normalizer(sigma.sigma) / static_cast<double>(ref_boxes.size());
}

/// Mean kernel value over all (test, retrieved) box pairs, scaled by the
/// density normalizer.
inline double retrieval_quality(std::span<const ObjectBox> test_boxes, std::span<const ObjectBox> retrieved_boxes,
                                PropertyKind kind, const SigmaParams& sigma)
{
    if (test_boxes.empty() || retrieved_boxes.empty())
        throw Error("retrieval_quality: both box lists must be non-empty");
    CompensatedSum sum;
    for (const auto& t : test_boxes)
        for (const auto& r : retrieved_boxes)
            sum += gaussian_kernel(distance(kind, t, r), sigma.sigma);
    const double z = static_cast<double>(test_boxes.size()) * static_cast<double>(retrieved_boxes.size());
    return sum.value() * kernel_normalizer(sigma.sigma) / z;
}

} // namespace conf
