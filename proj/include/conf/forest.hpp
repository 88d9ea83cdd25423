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

// Context forest: extremely randomized trees over global image features whose
// splits maximize the summed kernel-density compactness of the object boxes
// on either side. Leaves store training-image ids; a query accumulates one
// vote per tree for every image in the reached leaf.

#pragma once

#include "common.hpp"
#include "dataset.hpp"
#include "metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <thread>
#include <vector>

namespace conf {

/// How the two children's compactness values are combined into a split score.
enum class SplitObjective : std::uint8_t {
    /// c(left) + c(right)
    Sum = 0,
    /// (N_left c(left) + N_right c(right)) / N, N counting boxes
    BoxWeighted = 1,
};

struct TrainConfig {
    int num_trees = 750;
    int candidate_splits_per_node = 2000;
    int min_images_per_leaf = 4;
    int max_depth = 20;
    std::uint64_t seed = 0;
    /// neighbourhood size for the bandwidth estimate
    int k_nn_sigma = 10;
    /// threads used by train_forest; never affects the result
    int workers = 1;
    SplitObjective objective = SplitObjective::BoxWeighted;
    /// keep per-node objective diagnostics (not serialized)
    bool record_candidates = false;

    void validate() const
    {
        if (num_trees < 1 || candidate_splits_per_node < 1 || min_images_per_leaf < 1 || max_depth < 1 ||
            k_nn_sigma < 1 || workers < 1)
            throw Error("train config: all counts must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = nlohmann::json{{"num_trees", c.num_trees},
                       {"candidate_splits_per_node", c.candidate_splits_per_node},
                       {"min_images_per_leaf", c.min_images_per_leaf},
                       {"max_depth", c.max_depth},
                       {"seed", c.seed},
                       {"k_nn_sigma", c.k_nn_sigma},
                       {"workers", c.workers},
                       {"objective", c.objective == SplitObjective::Sum ? "sum" : "box_weighted"}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c)
{
    TrainConfig d;
    c.num_trees = j.value("num_trees", d.num_trees);
    c.candidate_splits_per_node = j.value("candidate_splits_per_node", d.candidate_splits_per_node);
    c.min_images_per_leaf = j.value("min_images_per_leaf", d.min_images_per_leaf);
    c.max_depth = j.value("max_depth", d.max_depth);
    c.seed = j.value("seed", d.seed);
    c.k_nn_sigma = j.value("k_nn_sigma", d.k_nn_sigma);
    c.workers = j.value("workers", d.workers);
    const auto obj = j.value("objective", std::string("box_weighted"));
    if (obj == "sum")
        c.objective = SplitObjective::Sum;
    else if (obj == "box_weighted")
        c.objective = SplitObjective::BoxWeighted;
    else
        throw Error("train config: unknown objective '" + obj + "'");
}

struct SplitParams {
    int feature_index = 0;
    double threshold = 0.0;

    bool operator==(const SplitParams&) const = default;
};

/// 1 routes right (feature strictly above threshold), 0 routes left.
inline int eval_split(const SplitParams& split, std::span<const double> phi)
{
    if (split.feature_index < 0 || static_cast<std::size_t>(split.feature_index) >= phi.size())
        throw Error("split feature index " + std::to_string(split.feature_index) +
                    " out of range for dimension " + std::to_string(phi.size()));
    return phi[static_cast<std::size_t>(split.feature_index)] > split.threshold ? 1 : 0;
}

/// Flat tree node. Internal nodes have feature >= 0; leaves reference a slice
/// of Tree::leaf_ids.
struct TreeNode {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t leaf_begin = 0;
    std::uint32_t leaf_count = 0;

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Objective bookkeeping for one internal node (debug mode only).
struct NodeDiagnostics {
    std::uint32_t node = 0;
    double chosen_score = 0.0;
    /// best score among the other valid candidates; -inf if there were none
    double best_rejected = -std::numeric_limits<double>::infinity();
    std::size_t valid_candidates = 0;
};

struct QueryStats {
    std::size_t node_visits = 0;
    std::size_t box_distance_computations = 0;
};

/// One tree in pre-order: node 0 is the root, a left child directly follows
/// its parent.
class Tree {
public:
    std::vector<TreeNode> nodes;
    std::vector<std::int64_t> leaf_ids;
    std::vector<NodeDiagnostics> diagnostics;

    std::span<const std::int64_t> leaf_members(std::uint32_t node) const
    {
        const auto& n = nodes[node];
        return {leaf_ids.data() + n.leaf_begin, n.leaf_count};
    }

    /// Leaf reached by `phi`; every internal node passed counts as one visit.
    std::uint32_t find_leaf(std::span<const double> phi, QueryStats* stats = nullptr) const
    {
        std::uint32_t cur = 0;
        while (!nodes[cur].is_leaf()) {
            const auto& n = nodes[cur];
            if (stats)
                ++stats->node_visits;
            cur = phi[static_cast<std::size_t>(n.feature)] > n.threshold ? n.right : n.left;
        }
        return cur;
    }

    std::size_t num_internal() const
    {
        return static_cast<std::size_t>(
            std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
    }
    std::size_t num_leaves() const { return nodes.size() - num_internal(); }

    int depth() const
    {
        int best = 0;
        std::vector<std::pair<std::uint32_t, int>> stack{{0u, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (!nodes[i].is_leaf()) {
                stack.emplace_back(nodes[i].left, d + 1);
                stack.emplace_back(nodes[i].right, d + 1);
            }
        }
        return best;
    }

    bool operator==(const Tree& o) const { return nodes == o.nodes && leaf_ids == o.leaf_ids; }
};

struct Forest {
    std::vector<Tree> trees;
    PropertyKind kind = PropertyKind::Appearance;
    SigmaParams sigma;
    int d_glob = 0;
    int k_retrieval = 10;
    TrainConfig config;

    bool operator==(const Forest& o) const
    {
        return trees == o.trees && kind == o.kind && sigma == o.sigma && d_glob == o.d_glob &&
               k_retrieval == o.k_retrieval;
    }
};

struct RetrievalEntry {
    std::int64_t image_id = 0;
    int votes = 0;

    bool operator==(const RetrievalEntry&) const = default;
};

struct RetrievalSet {
    std::vector<RetrievalEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    bool operator==(const RetrievalSet&) const = default;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Kernel mass between the boxes of every pair of images of a training set:
/// mass(a,b) = sum over boxes u in a, v in b, u != v of exp(-D(u,v)^2 / 2 sigma^2).
/// The compactness pair sum of any image subset S is sum_{a,b in S} mass(a,b).
class PairKernelTable {
public:
    PairKernelTable(const Dataset& train, PropertyKind kind, const SigmaParams& sigma)
        : n_(train.size()), sigma_(sigma), mass_(n_ * n_, 0.0), boxes_(n_, 0)
    {
        std::vector<const ObjectBox*> flat;
        std::vector<std::size_t> owner;
        for (std::size_t i = 0; i < n_; ++i) {
            boxes_[i] = static_cast<std::uint32_t>(train[i].boxes.size());
            for (const auto& b : train[i].boxes) {
                flat.push_back(&b);
                owner.push_back(i);
            }
        }
        for (std::size_t u = 0; u < flat.size(); ++u) {
            for (std::size_t v = u + 1; v < flat.size(); ++v) {
                const double k = gaussian_kernel(distance(kind, *flat[u], *flat[v]), sigma.sigma);
                mass_[owner[u] * n_ + owner[v]] += k;
                if (owner[u] != owner[v])
                    mass_[owner[v] * n_ + owner[u]] += k;
                else
                    mass_[owner[u] * n_ + owner[u]] += k; // same image: count both orders
            }
        }
    }

    std::size_t size() const { return n_; }
    const SigmaParams& sigma() const { return sigma_; }
    double mass(std::size_t a, std::size_t b) const { return mass_[a * n_ + b]; }
    const double* row(std::size_t a) const { return mass_.data() + a * n_; }
    std::uint32_t boxes(std::size_t a) const { return boxes_[a]; }

    /// c(S) with N the number of boxes in S.
    double compactness_of(std::span<const std::uint32_t> images) const
    {
        CompensatedSum s;
        double n = 0.0;
        for (auto a : images) {
            n += boxes_[a];
            for (auto b : images)
                s += mass(a, b);
        }
        return n <= 1.0 ? 0.0 : s.value() * kernel_normalizer(sigma_.sigma) / (n * n);
    }

private:
    std::size_t n_;
    SigmaParams sigma_;
    std::vector<double> mass_;
    std::vector<std::uint32_t> boxes_;
};

struct SplitChoice {
    SplitParams split;
    double score = 0.0;
    double best_rejected = -std::numeric_limits<double>::infinity();
    std::size_t valid_candidates = 0;
};

/// Samples `cfg.candidate_splits_per_node` (feature, threshold) pairs over the
/// images at a node (dataset indices) and returns the one maximizing the
/// configured objective over c(left) and c(right). Candidates leaving fewer
/// than `min_child` images on a side are discarded; none is returned if
/// nothing survives.
///
/// Candidates sharing a feature are scored in one sweep over the images sorted
/// by that feature, so the cost is O(distinct features * n^2) rather than
/// O(candidates * boxes^2).
inline std::optional<SplitChoice> best_split(const Dataset& train, std::span<const std::uint32_t> node_images,
                                             const PairKernelTable& table, const TrainConfig& cfg, Rng& rng,
                                             std::size_t min_child = 1)
{
    const std::size_t n = node_images.size();
    if (n < 2)
        return std::nullopt;
    min_child = std::max<std::size_t>(min_child, 1);
    const int d = train.d_glob();

    struct Candidate {
        int feature;
        double threshold;
    };
    std::vector<Candidate> cands;
    cands.reserve(static_cast<std::size_t>(cfg.candidate_splits_per_node));
    std::vector<std::optional<std::pair<double, double>>> range(static_cast<std::size_t>(d));
    std::uniform_int_distribution<int> pick_feature(0, d - 1);
    for (int c = 0; c < cfg.candidate_splits_per_node; ++c) {
        const int f = pick_feature(rng);
        auto& r = range[static_cast<std::size_t>(f)];
        if (!r) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (auto i : node_images) {
                const double v = train[i].global_features[static_cast<std::size_t>(f)];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            r.emplace(lo, hi);
        }
        std::uniform_real_distribution<double> pick_threshold(r->first, r->second);
        cands.push_back({f, r->first < r->second ? pick_threshold(rng) : r->first});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.feature != b.feature ? a.feature < b.feature : a.threshold < b.threshold;
    });

    // Node-local copy of the kernel mass block keeps the sweeps cache resident.
    std::vector<double> local(n * n);
    std::vector<double> row_total(n, 0.0);
    std::vector<double> local_boxes(n);
    double total = 0.0;
    double node_boxes = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        const double* row = table.row(node_images[a]);
        double* dst = local.data() + a * n;
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            dst[b] = row[node_images[b]];
            s += dst[b];
        }
        row_total[a] = s;
        total += s;
        local_boxes[a] = table.boxes(node_images[a]);
        node_boxes += local_boxes[a];
    }

    const double norm = kernel_normalizer(table.sigma().sigma);
    auto side = [norm](double pair_sum, double boxes) {
        return boxes <= 1.0 ? 0.0 : std::max(pair_sum, 0.0) * norm / (boxes * boxes);
    };

    std::optional<SplitChoice> best;
    std::vector<std::size_t> order(n);
    std::vector<double> sorted_vals(n);
    std::vector<double> left_sum(n + 1), left_boxes(n + 1), cross(n + 1), to_left(n);

    std::size_t c = 0;
    while (c < cands.size()) {
        const int f = cands[c].feature;
        std::size_t c_end = c;
        while (c_end < cands.size() && cands[c_end].feature == f)
            ++c_end;

        const auto fi = static_cast<std::size_t>(f);
        for (std::size_t i = 0; i < n; ++i)
            order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double va = train[node_images[a]].global_features[fi];
            const double vb = train[node_images[b]].global_features[fi];
            return va != vb ? va < vb : node_images[a] < node_images[b];
        });
        for (std::size_t i = 0; i < n; ++i)
            sorted_vals[i] = train[node_images[order[i]]].global_features[fi];

        // Prefix sweep: moving image x from the right side to the left.
        // to_left[b] accumulates the kernel mass between b and the left side.
        std::fill(to_left.begin(), to_left.end(), 0.0);
        left_sum[0] = 0.0;
        left_boxes[0] = 0.0;
        cross[0] = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const std::size_t x = order[p];
            const double* row = local.data() + x * n;
            const double in_left = to_left[x];
            double* acc = to_left.data();
            for (std::size_t b = 0; b < n; ++b)
                acc[b] += row[b];
            const double self = row[x];
            left_sum[p + 1] = left_sum[p] + 2.0 * in_left + self;
            left_boxes[p + 1] = left_boxes[p] + local_boxes[x];
            cross[p + 1] = cross[p] - in_left + (row_total[x] - self - in_left);
        }

        for (std::size_t k = c; k < c_end; ++k) {
            const double t = cands[k].threshold;
            const auto p = static_cast<std::size_t>(
                std::upper_bound(sorted_vals.begin(), sorted_vals.end(), t) - sorted_vals.begin());
            if (p < min_child || n - p < min_child)
                continue;
            const double right_sum = total - left_sum[p] - 2.0 * cross[p];
            const double lb = left_boxes[p];
            const double rb = node_boxes - lb;
            const double score = cfg.objective == SplitObjective::Sum
                                     ? side(left_sum[p], lb) + side(right_sum, rb)
                                     : (lb * side(left_sum[p], lb) + rb * side(right_sum, rb)) /
                                           std::max(node_boxes, 1.0);
            if (!best) {
                best = SplitChoice{{f, t}, score, -std::numeric_limits<double>::infinity(), 1};
            } else {
                ++best->valid_candidates;
                if (score > best->score) {
                    best->best_rejected = std::max(best->best_rejected, best->score);
                    best->split = {f, t};
                    best->score = score;
                } else {
                    best->best_rejected = std::max(best->best_rejected, score);
                }
            }
        }
        c = c_end;
    }
    return best;
}

namespace detail {

inline std::uint32_t grow(const Dataset& train, std::vector<std::uint32_t> images, int depth,
                          const PairKernelTable& table, const TrainConfig& cfg, Rng& rng, Tree& tree)
{
    const auto idx = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto min_leaf = static_cast<std::size_t>(cfg.min_images_per_leaf);

    auto make_leaf = [&] {
        auto& node = tree.nodes[idx];
        node.feature = -1;
        node.leaf_begin = static_cast<std::uint32_t>(tree.leaf_ids.size());
        node.leaf_count = static_cast<std::uint32_t>(images.size());
        std::vector<std::int64_t> ids;
        ids.reserve(images.size());
        for (auto i : images)
            ids.push_back(train[i].id);
        std::sort(ids.begin(), ids.end());
        tree.leaf_ids.insert(tree.leaf_ids.end(), ids.begin(), ids.end());
        return idx;
    };

    if (images.size() < 2 * min_leaf || depth >= cfg.max_depth)
        return make_leaf();
    auto choice = best_split(train, images, table, cfg, rng, min_leaf);
    if (!choice)
        return make_leaf();

    std::vector<std::uint32_t> left, right;
    for (auto i : images) {
        if (eval_split(choice->split, train[i].global_features))
            right.push_back(i);
        else
            left.push_back(i);
    }
    images.clear();
    images.shrink_to_fit();

    tree.nodes[idx].feature = choice->split.feature_index;
    tree.nodes[idx].threshold = choice->split.threshold;
    if (cfg.record_candidates)
        tree.diagnostics.push_back({idx, choice->score, choice->best_rejected, choice->valid_candidates});
    const auto l = grow(train, std::move(left), depth + 1, table, cfg, rng, tree);
    const auto r = grow(train, std::move(right), depth + 1, table, cfg, rng, tree);
    tree.nodes[idx].left = l;
    tree.nodes[idx].right = r;
    return idx;
}

} // namespace detail

/// Grows one tree over every image of `train` with a precomputed kernel table.
inline Tree train_tree(const Dataset& train, const PairKernelTable& table, const TrainConfig& cfg,
                       std::uint64_t tree_seed)
{
    if (train.empty())
        throw Error("train_tree: empty training set");
    Rng rng(tree_seed);
    std::vector<std::uint32_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = static_cast<std::uint32_t>(i);
    Tree tree;
    detail::grow(train, std::move(all), 0, table, cfg, rng, tree);
    return tree;
}

inline Tree train_tree(const Dataset& train, PropertyKind kind, const SigmaParams& sigma, const TrainConfig& cfg,
                       std::uint64_t tree_seed)
{
    return train_tree(train, PairKernelTable(train, kind, sigma), cfg, tree_seed);
}

inline std::uint64_t tree_seed(const TrainConfig& cfg, std::size_t tree_index)
{
    return derive_seed(cfg.seed, "forest/tree", tree_index);
}

/// Estimates sigma from every training box, then grows cfg.num_trees trees.
/// Trees are seeded by index, so the result does not depend on cfg.workers.
inline Forest train_forest(const Dataset& train, PropertyKind kind, const TrainConfig& cfg, int k_retrieval = 10)
{
    cfg.validate();
    if (k_retrieval < 1)
        throw Error("k_retrieval must be >= 1");
    const auto boxes = train.all_boxes();
    if (boxes.empty())
        throw Error("train_forest: training set has no object boxes");

    Forest forest;
    forest.kind = kind;
    forest.sigma = estimate_sigma(boxes, kind, std::min<int>(cfg.k_nn_sigma, static_cast<int>(boxes.size()) - 1));
    forest.d_glob = train.d_glob();
    forest.k_retrieval = k_retrieval;
    forest.config = cfg;

    const PairKernelTable table(train, kind, forest.sigma);
    const auto T = static_cast<std::size_t>(cfg.num_trees);
    forest.trees.resize(T);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t t = next++; t < T; t = next++)
            forest.trees[t] = train_tree(train, table, cfg, tree_seed(cfg, t));
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), T);
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back(work);
    }
    return forest;
}

// ---------------------------------------------------------------------------
// Querying
// ---------------------------------------------------------------------------

using VoteMap = std::map<std::int64_t, int>;

inline void check_dim(const Forest& forest, std::span<const double> phi)
{
    if (static_cast<int>(phi.size()) != forest.d_glob)
        throw Error("query dimension " + std::to_string(phi.size()) + " does not match forest d_glob " +
                    std::to_string(forest.d_glob));
}

/// eta(image): number of trees whose reached leaf contains the image.
inline VoteMap query(const Forest& forest, std::span<const double> phi, QueryStats* stats = nullptr)
{
    check_dim(forest, phi);
    VoteMap votes;
    for (const auto& tree : forest.trees)
        for (auto id : tree.leaf_members(tree.find_leaf(phi, stats)))
            ++votes[id];
    return votes;
}

/// Top-k of a vote map by (votes desc, id asc); zero-vote ids never appear.
inline RetrievalSet top_k(const VoteMap& votes, std::size_t k)
{
    RetrievalSet out;
    for (const auto& [id, v] : votes)
        if (v > 0)
            out.entries.push_back({id, v});
    std::sort(out.entries.begin(), out.entries.end(), [](const RetrievalEntry& a, const RetrievalEntry& b) {
        return a.votes != b.votes ? a.votes > b.votes : a.image_id < b.image_id;
    });
    if (out.entries.size() > k)
        out.entries.resize(k);
    return out;
}

inline RetrievalSet retrieval_set(const Forest& forest, std::span<const double> phi, std::optional<int> k = {},
                                  QueryStats* stats = nullptr)
{
    const int kk = k.value_or(forest.k_retrieval);
    if (kk < 1)
        throw Error("retrieval size must be >= 1");
    return top_k(query(forest, phi, stats), static_cast<std::size_t>(kk));
}

// ---------------------------------------------------------------------------
// Memory accounting
// ---------------------------------------------------------------------------

struct MemoryFootprint {
    std::size_t internal_bytes = 0;
    std::size_t leaf_bytes = 0;
    std::size_t total = 0;
    double mean_internal_nodes_per_tree = 0.0;
};

inline constexpr std::size_t kBytesPerInternalNode = 16; // threshold, feature id, two child ids
inline constexpr std::size_t kBytesPerLeafIndex = 2;

/// Analytic storage cost: 16 bytes per internal node plus 2 bytes per stored
/// training-image index.
inline MemoryFootprint memory_footprint(const Forest& forest)
{
    MemoryFootprint m;
    std::size_t internal = 0;
    for (const auto& t : forest.trees) {
        internal += t.num_internal();
        m.leaf_bytes += kBytesPerLeafIndex * t.leaf_ids.size();
    }
    m.internal_bytes = kBytesPerInternalNode * internal;
    m.total = m.internal_bytes + m.leaf_bytes;
    m.mean_internal_nodes_per_tree =
        forest.trees.empty() ? 0.0 : static_cast<double>(internal) / static_cast<double>(forest.trees.size());
    return m;
}

/// The same accounting for a forest described only by its shape.
inline double footprint_bytes(double num_trees, double internal_nodes_per_tree, double num_train)
{
    return num_trees * (static_cast<double>(kBytesPerInternalNode) * internal_nodes_per_tree +
                        static_cast<double>(kBytesPerLeafIndex) * num_train);
}

/// Bytes of the dense double-precision feature matrix a kNN index keeps.
inline double knn_matrix_bytes(double num_train, double d_glob)
{
    return num_train * d_glob * static_cast<double>(sizeof(double));
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (little-endian):
//   "CONF" | u16 version
//   u8 kind | f64 sigma | u8 sigma_kind | u32 sigma_k_nn | u8 sigma_degenerate
//   u32 d_glob | u32 k_retrieval
//   u32 num_trees | u32 candidates | u32 min_leaf | u32 max_depth | u64 seed | u32 k_nn_sigma
//   u8 objective
//   u32 tree_count, then per tree: u32 node_count and node_count pre-order records
//     u8 0 (leaf)     | u32 count | count x i64 image id
//     u8 1 (internal) | u32 feature | f64 threshold
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kForestFormatVersion = 1;

namespace detail {

class ByteWriter {
public:
    explicit ByteWriter(std::ostream& os) : os_(os) {}

    template <typename U>
    void uint(U v)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i)
            os_.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
    void f64(double v)
    {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        uint(bits);
    }
    void i64(std::int64_t v) { uint(static_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

private:
    std::ostream& os_;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& is) : is_(is) {}

    template <typename U>
    U uint()
    {
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            const int c = is_.get();
            if (c == std::char_traits<char>::eof())
                throw IoError("forest file truncated");
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
        }
        return static_cast<U>(v);
    }
    double f64()
    {
        const auto bits = uint<std::uint64_t>();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(uint<std::uint64_t>()); }
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& is_;
};

inline std::uint32_t read_subtree(ByteReader& in, Tree& tree, std::uint32_t remaining_budget, int d_glob)
{
    if (tree.nodes.size() >= remaining_budget)
        throw Error("forest file: tree has more nodes than declared");
    const auto idx = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto tag = in.uint<std::uint8_t>();
    if (tag == 0) {
        const auto count = in.uint<std::uint32_t>();
        if (count == 0)
            throw Error("forest file: empty leaf");
        tree.nodes[idx].leaf_begin = static_cast<std::uint32_t>(tree.leaf_ids.size());
        tree.nodes[idx].leaf_count = count;
        for (std::uint32_t i = 0; i < count; ++i)
            tree.leaf_ids.push_back(in.i64());
        return idx;
    }
    if (tag != 1)
        throw Error("forest file: bad node tag " + std::to_string(tag));
    const auto feature = in.uint<std::uint32_t>();
    if (feature >= static_cast<std::uint32_t>(d_glob))
        throw Error("forest file: split feature out of range");
    tree.nodes[idx].feature = static_cast<std::int32_t>(feature);
    tree.nodes[idx].threshold = in.f64();
    const auto l = read_subtree(in, tree, remaining_budget, d_glob);
    const auto r = read_subtree(in, tree, remaining_budget, d_glob);
    tree.nodes[idx].left = l;
    tree.nodes[idx].right = r;
    return idx;
}

inline void write_subtree(ByteWriter& out, const Tree& tree, std::uint32_t idx)
{
    const auto& n = tree.nodes[idx];
    if (n.is_leaf()) {
        out.uint<std::uint8_t>(0);
        out.uint<std::uint32_t>(n.leaf_count);
        for (auto id : tree.leaf_members(idx))
            out.i64(id);
        return;
    }
    out.uint<std::uint8_t>(1);
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(n.feature));
    out.f64(n.threshold);
    write_subtree(out, tree, n.left);
    write_subtree(out, tree, n.right);
}

} // namespace detail

inline void write_forest(std::ostream& os, const Forest& f)
{
    detail::ByteWriter out(os);
    out.raw("CONF");
    out.uint<std::uint16_t>(kForestFormatVersion);
    out.uint<std::uint8_t>(static_cast<std::uint8_t>(f.kind));
    out.f64(f.sigma.sigma);
    out.uint<std::uint8_t>(static_cast<std::uint8_t>(f.sigma.kind));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.sigma.k_nn));
    out.uint<std::uint8_t>(f.sigma.degenerate ? 1 : 0);
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.d_glob));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.k_retrieval));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.config.num_trees));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.config.candidate_splits_per_node));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.config.min_images_per_leaf));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.config.max_depth));
    out.uint<std::uint64_t>(f.config.seed);
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.config.k_nn_sigma));
    out.uint<std::uint8_t>(static_cast<std::uint8_t>(f.config.objective));
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(f.trees.size()));
    for (const auto& t : f.trees) {
        out.uint<std::uint32_t>(static_cast<std::uint32_t>(t.nodes.size()));
        detail::write_subtree(out, t, 0);
    }
}

inline Forest read_forest(std::istream& is)
{
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "CONF", 4) != 0)
        throw VersionError("not a forest file (bad magic)");
    detail::ByteReader in(is);
    const auto version = in.uint<std::uint16_t>();
    if (version != kForestFormatVersion)
        throw VersionError("unsupported forest format version " + std::to_string(version) + " (expected " +
                           std::to_string(kForestFormatVersion) + ")");
    auto kind_of = [](std::uint8_t v) {
        if (v > 2)
            throw Error("forest file: bad property kind");
        return static_cast<PropertyKind>(v);
    };
    Forest f;
    f.kind = kind_of(in.uint<std::uint8_t>());
    f.sigma.sigma = in.f64();
    f.sigma.kind = kind_of(in.uint<std::uint8_t>());
    f.sigma.k_nn = static_cast<int>(in.uint<std::uint32_t>());
    f.sigma.degenerate = in.uint<std::uint8_t>() != 0;
    f.d_glob = static_cast<int>(in.uint<std::uint32_t>());
    f.k_retrieval = static_cast<int>(in.uint<std::uint32_t>());
    f.config.num_trees = static_cast<int>(in.uint<std::uint32_t>());
    f.config.candidate_splits_per_node = static_cast<int>(in.uint<std::uint32_t>());
    f.config.min_images_per_leaf = static_cast<int>(in.uint<std::uint32_t>());
    f.config.max_depth = static_cast<int>(in.uint<std::uint32_t>());
    f.config.seed = in.uint<std::uint64_t>();
    f.config.k_nn_sigma = static_cast<int>(in.uint<std::uint32_t>());
    const auto objective = in.uint<std::uint8_t>();
    if (objective > 1)
        throw Error("forest file: bad split objective");
    f.config.objective = static_cast<SplitObjective>(objective);
    if (!(f.sigma.sigma > 0.0) || f.d_glob <= 0)
        throw Error("forest file: invalid header");
    const auto num_trees = in.uint<std::uint32_t>();
    if (num_trees == 0)
        throw Error("forest file: no trees");
    f.trees.resize(num_trees);
    for (auto& t : f.trees) {
        const auto node_count = in.uint<std::uint32_t>();
        detail::read_subtree(in, t, node_count, f.d_glob);
        if (t.nodes.size() != node_count)
            throw Error("forest file: tree has fewer nodes than declared");
    }
    if (!in.at_end())
        throw Error("forest file: trailing bytes after last tree");
    return f;
}

inline void save_forest(const Forest& f, const std::string& path)
{
    if (path.empty())
        throw IoError("empty forest path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write forest file '" + path + "'");
    write_forest(out, f);
    if (!out)
        throw IoError("write failed for '" + path + "'");
}

inline Forest load_forest(const std::string& path)
{
    if (path.empty())
        throw IoError("empty forest path");
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open forest file '" + path + "'");
    return read_forest(in);
}

inline std::string forest_bytes(const Forest& f)
{
    std::ostringstream os(std::ios::binary);
    write_forest(os, f);
    return os.str();
}

} // namespace conf
