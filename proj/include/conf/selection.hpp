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

// Detector component selection from a retrieval set.
//
// Each training image is labelled by the empirical distribution of its boxes'
// component ids. The posterior for a test image is the unweighted mean of
// those distributions over the retrieval set; images without boxes carry no
// component evidence and are left out of the mean. Components are then taken
// greedily by descending probability until their mass strictly exceeds gamma.
//
// Components with zero posterior mass are never selected, not even at
// gamma = 1. Running every component of the detector is therefore NOT the
// limit of this procedure when the retrieval set never saw some component.

#pragma once

#include "dataset.hpp"
#include "forest.hpp"

#include <algorithm>
#include <vector>

namespace conf {

struct ComponentDistribution {
    std::vector<double> probs;
    /// true for images without boxes: no distribution exists
    bool empty = false;

    std::size_t num_positive() const
    {
        return static_cast<std::size_t>(std::count_if(probs.begin(), probs.end(), [](double p) { return p > 0.0; }));
    }
};

struct SelectionResult {
    std::vector<int> selected;
    double cumulative_mass = 0.0;
    ComponentDistribution posterior;
};

inline ComponentDistribution image_component_distribution(const ImageRecord& img, int num_components)
{
    if (num_components < 1)
        throw Error("component count must be >= 1");
    ComponentDistribution out;
    out.probs.assign(static_cast<std::size_t>(num_components), 0.0);
    if (img.boxes.empty()) {
        out.empty = true;
        return out;
    }
    for (const auto& b : img.boxes) {
        if (!b.component_id)
            throw Error("image " + std::to_string(img.id) + ": box without component id");
        if (*b.component_id >= num_components)
            throw Error("image " + std::to_string(img.id) + ": component id " + std::to_string(*b.component_id) +
                        " outside [0," + std::to_string(num_components) + ")");
        out.probs[static_cast<std::size_t>(*b.component_id)] += 1.0;
    }
    const double n = static_cast<double>(img.boxes.size());
    for (auto& p : out.probs)
        p /= n;
    return out;
}

/// Mean of the member images' component distributions, skipping boxless
/// members.
inline ComponentDistribution posterior(const RetrievalSet& retr, const Dataset& train, int num_components)
{
    if (retr.empty())
        throw Error("posterior: empty retrieval set");
    ComponentDistribution out;
    out.probs.assign(static_cast<std::size_t>(num_components), 0.0);
    std::size_t used = 0;
    for (const auto& e : retr.entries) {
        const auto dist = image_component_distribution(train.by_id(e.image_id), num_components);
        if (dist.empty)
            continue;
        for (std::size_t c = 0; c < out.probs.size(); ++c)
            out.probs[c] += dist.probs[c];
        ++used;
    }
    if (used == 0)
        throw Error("posterior: every image in the retrieval set is boxless");
    for (auto& p : out.probs)
        p /= static_cast<double>(used);
    return out;
}

inline SelectionResult select_components(const ComponentDistribution& post, double gamma)
{
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw Error("gamma must lie in [0,1]");
    SelectionResult out;
    out.posterior = post;
    std::vector<int> order;
    for (std::size_t c = 0; c < post.probs.size(); ++c)
        if (post.probs[c] > 0.0)
            order.push_back(static_cast<int>(c));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return post.probs[static_cast<std::size_t>(a)] > post.probs[static_cast<std::size_t>(b)];
    });
    for (int c : order) {
        out.selected.push_back(c);
        out.cumulative_mass += post.probs[static_cast<std::size_t>(c)];
        if (out.cumulative_mass > gamma)
            break;
    }
    return out;
}

} // namespace conf
