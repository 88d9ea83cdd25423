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

// Reference retrieval methods: brute-force nearest neighbours on the global
// features, and the whole training set as an image-independent prior.

#pragma once

#include "dataset.hpp"
#include "forest.hpp"

#include <atomic>
#include <span>
#include <vector>

namespace conf {

/// Dense row-major copy of the training features with a distance counter.
class KnnIndex {
public:
    explicit KnnIndex(const Dataset& train) : d_(static_cast<std::size_t>(train.d_glob()))
    {
        features_.reserve(train.size() * d_);
        ids_.reserve(train.size());
        for (const auto& img : train.images()) {
            features_.insert(features_.end(), img.global_features.begin(), img.global_features.end());
            ids_.push_back(img.id);
        }
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return d_; }
    std::size_t memory_bytes() const { return features_.size() * sizeof(double); }
    std::uint64_t distance_computations() const { return counter_.load(); }
    void reset_counter() { counter_.store(0); }

    /// Squared L2 distance from every training row to `phi`, counted.
    std::vector<double> distances_to(std::span<const double> phi) const
    {
        if (phi.size() != d_)
            throw Error("knn: probe dimension " + std::to_string(phi.size()) + " does not match index dimension " +
                        std::to_string(d_));
        std::vector<double> out(ids_.size());
        for (std::size_t r = 0; r < ids_.size(); ++r) {
            const double* row = features_.data() + r * d_;
            double s = 0.0;
            for (std::size_t j = 0; j < d_; ++j) {
                const double diff = row[j] - phi[j];
                s += diff * diff;
            }
            out[r] = s;
        }
        counter_.fetch_add(ids_.size());
        return out;
    }

    std::int64_t id(std::size_t row) const { return ids_[row]; }

private:
    std::size_t d_;
    std::vector<double> features_;
    std::vector<std::int64_t> ids_;
    mutable std::atomic<std::uint64_t> counter_{0};
};

/// The k training images closest to `phi` (ties by ascending id). The votes
/// field holds k - rank so the set is ordered like a forest retrieval set.
inline RetrievalSet knn_retrieval(const KnnIndex& index, std::span<const double> phi, int k)
{
    if (k < 1)
        throw Error("knn: k must be >= 1");
    const auto dist = index.distances_to(phi);
    std::vector<std::size_t> rows(dist.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i] = i;
    const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), rows.size());
    auto closer = [&](std::size_t a, std::size_t b) {
        return dist[a] != dist[b] ? dist[a] < dist[b] : index.id(a) < index.id(b);
    };
    std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(kk), rows.end(), closer);
    RetrievalSet out;
    for (std::size_t r = 0; r < kk; ++r)
        out.entries.push_back({index.id(rows[r]), static_cast<int>(kk - r)});
    return out;
}

/// Every training image with one vote each, in ascending id order.
inline RetrievalSet all_train_retrieval(const Dataset& train)
{
    if (train.empty())
        throw Error("all_train_retrieval: empty training set");
    RetrievalSet out;
    for (const auto& img : train.images())
        out.entries.push_back({img.id, 1});
    std::sort(out.entries.begin(), out.entries.end(),
              [](const RetrievalEntry& a, const RetrievalEntry& b) { return a.image_id < b.image_id; });
    return out;
}

/// Boxes of all images in a retrieval set, in retrieval order.
inline std::vector<ObjectBox> gather_boxes(const RetrievalSet& r, const Dataset& train)
{
    std::vector<ObjectBox> out;
    for (const auto& e : r.entries) {
        const auto& img = train.by_id(e.image_id);
        out.insert(out.end(), img.boxes.begin(), img.boxes.end());
    }
    return out;
}

} // namespace conf
