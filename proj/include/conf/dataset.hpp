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

// Annotated image data: boxes, images, datasets, the JSON-lines file format,
// train/test splitting and the synthetic scene generator.

#pragma once

#include "common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace conf {

/// One annotated object. Geometry is in image fractions.
struct ObjectBox {
    double cx = 0.5;
    double cy = 0.5;
    double w = 0.1;
    double h = 0.1;
    std::vector<double> appearance;
    std::optional<int> component_id;

    bool operator==(const ObjectBox&) const = default;
};

struct ImageRecord {
    std::int64_t id = 0;
    std::vector<double> global_features;
    std::vector<ObjectBox> boxes;

    bool operator==(const ImageRecord&) const = default;
};

inline bool valid_geometry(const ObjectBox& b)
{
    return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) && std::isfinite(b.h) &&
           b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 && b.cy <= 1.0 && b.w > 0.0 && b.w <= 1.0 &&
           b.h > 0.0 && b.h <= 1.0;
}

/// Immutable collection of images sharing the same vector dimensions.
///
/// `num_components` is 0 when no box carries a component id; otherwise every
/// component id lies in [0, num_components).
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<ImageRecord> images, int d_glob, int d_app, int num_components = -1)
        : images_(std::move(images)), d_glob_(d_glob), d_app_(d_app)
    {
        if (d_glob_ <= 0 || d_app_ <= 0)
            throw Error("dataset dimensions must be positive (d_glob=" + std::to_string(d_glob_) +
                        ", d_app=" + std::to_string(d_app_) + ")");
        int max_component = -1;
        for (std::size_t i = 0; i < images_.size(); ++i) {
            const auto& img = images_[i];
            if (static_cast<int>(img.global_features.size()) != d_glob_)
                throw Error("image " + std::to_string(img.id) + ": global feature dimension " +
                            std::to_string(img.global_features.size()) + " conflicts with d_glob " +
                            std::to_string(d_glob_));
            for (double v : img.global_features)
                if (!std::isfinite(v))
                    throw Error("image " + std::to_string(img.id) + ": non-finite global feature");
            for (const auto& b : img.boxes) {
                if (!valid_geometry(b))
                    throw Error("image " + std::to_string(img.id) + ": box geometry outside [0,1]");
                if (static_cast<int>(b.appearance.size()) != d_app_)
                    throw Error("image " + std::to_string(img.id) + ": appearance dimension " +
                                std::to_string(b.appearance.size()) + " conflicts with d_app " +
                                std::to_string(d_app_));
                for (double v : b.appearance)
                    if (!std::isfinite(v))
                        throw Error("image " + std::to_string(img.id) + ": non-finite appearance entry");
                if (b.component_id) {
                    if (*b.component_id < 0)
                        throw Error("image " + std::to_string(img.id) + ": negative component id");
                    max_component = std::max(max_component, *b.component_id);
                }
            }
            if (!index_.emplace(img.id, i).second)
                throw Error("duplicate image id " + std::to_string(img.id));
        }
        if (num_components < 0) {
            num_components_ = max_component + 1;
        } else {
            if (max_component >= num_components)
                throw Error("component id " + std::to_string(max_component) +
                            " exceeds num_components " + std::to_string(num_components));
            num_components_ = num_components;
        }
    }

    const std::vector<ImageRecord>& images() const { return images_; }
    std::size_t size() const { return images_.size(); }
    bool empty() const { return images_.empty(); }
    int d_glob() const { return d_glob_; }
    int d_app() const { return d_app_; }
    int num_components() const { return num_components_; }

    const ImageRecord& operator[](std::size_t i) const { return images_[i]; }

    std::optional<std::size_t> index_of(std::int64_t id) const
    {
        auto it = index_.find(id);
        if (it == index_.end())
            return std::nullopt;
        return it->second;
    }

    const ImageRecord& by_id(std::int64_t id) const
    {
        auto idx = index_of(id);
        if (!idx)
            throw Error("unknown image id " + std::to_string(id));
        return images_[*idx];
    }

    std::size_t num_boxes() const
    {
        std::size_t n = 0;
        for (const auto& img : images_)
            n += img.boxes.size();
        return n;
    }

    std::vector<ObjectBox> all_boxes() const
    {
        std::vector<ObjectBox> out;
        out.reserve(num_boxes());
        for (const auto& img : images_)
            out.insert(out.end(), img.boxes.begin(), img.boxes.end());
        return out;
    }

    /// New dataset over the images at `indices`, in that order.
    Dataset subset(const std::vector<std::size_t>& indices) const
    {
        std::vector<ImageRecord> imgs;
        imgs.reserve(indices.size());
        for (auto i : indices)
            imgs.push_back(images_.at(i));
        return Dataset(std::move(imgs), d_glob_, d_app_, num_components_);
    }

    bool operator==(const Dataset& o) const
    {
        return d_glob_ == o.d_glob_ && d_app_ == o.d_app_ && num_components_ == o.num_components_ &&
               images_ == o.images_;
    }

private:
    std::vector<ImageRecord> images_;
    std::unordered_map<std::int64_t, std::size_t> index_;
    int d_glob_ = 1;
    int d_app_ = 1;
    int num_components_ = 0;
};

// ---------------------------------------------------------------------------
// JSON-lines I/O
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json image_to_json(const ImageRecord& img)
{
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : img.boxes) {
        nlohmann::json jb;
        jb["cx"] = b.cx;
        jb["cy"] = b.cy;
        jb["w"] = b.w;
        jb["h"] = b.h;
        jb["app"] = b.appearance;
        jb["component"] = b.component_id ? nlohmann::json(*b.component_id) : nlohmann::json(nullptr);
        boxes.push_back(std::move(jb));
    }
    nlohmann::json j;
    j["id"] = img.id;
    j["phi"] = img.global_features;
    j["boxes"] = std::move(boxes);
    return j;
}

[[noreturn]] inline void field_error(std::size_t line, const std::string& field, const std::string& what)
{
    throw Error("line " + std::to_string(line) + ": field '" + field + "' " + what);
}

inline double number_field(const nlohmann::json& j, const char* key, std::size_t line)
{
    auto it = j.find(key);
    if (it == j.end())
        field_error(line, key, "is missing");
    if (!it->is_number())
        field_error(line, key, "is not a number");
    return it->get<double>();
}

inline std::vector<double> vector_field(const nlohmann::json& j, const char* key, std::size_t line)
{
    auto it = j.find(key);
    if (it == j.end())
        field_error(line, key, "is missing");
    if (!it->is_array())
        field_error(line, key, "is not an array");
    std::vector<double> out;
    out.reserve(it->size());
    for (const auto& v : *it) {
        if (!v.is_number())
            field_error(line, key, "contains a non-numeric entry");
        out.push_back(v.get<double>());
    }
    return out;
}

inline ImageRecord image_from_json(const nlohmann::json& j, std::size_t line, int d_glob, int d_app)
{
    if (!j.is_object())
        throw Error("line " + std::to_string(line) + ": record is not a JSON object");
    ImageRecord img;
    auto id = j.find("id");
    if (id == j.end())
        field_error(line, "id", "is missing");
    if (!id->is_number_integer())
        field_error(line, "id", "is not an integer");
    img.id = id->get<std::int64_t>();
    img.global_features = vector_field(j, "phi", line);
    if (static_cast<int>(img.global_features.size()) != d_glob)
        throw Error("line " + std::to_string(line) + ": field 'phi' has dimension " +
                    std::to_string(img.global_features.size()) + " but header d_glob is " +
                    std::to_string(d_glob));
    auto boxes = j.find("boxes");
    if (boxes == j.end())
        field_error(line, "boxes", "is missing");
    if (!boxes->is_array())
        field_error(line, "boxes", "is not an array");
    for (const auto& jb : *boxes) {
        if (!jb.is_object())
            field_error(line, "boxes", "contains a non-object entry");
        ObjectBox b;
        b.cx = number_field(jb, "cx", line);
        b.cy = number_field(jb, "cy", line);
        b.w = number_field(jb, "w", line);
        b.h = number_field(jb, "h", line);
        if (!(b.cx >= 0.0 && b.cx <= 1.0))
            field_error(line, "cx", "outside [0,1]");
        if (!(b.cy >= 0.0 && b.cy <= 1.0))
            field_error(line, "cy", "outside [0,1]");
        if (!(b.w > 0.0 && b.w <= 1.0))
            field_error(line, "w", "outside (0,1]");
        if (!(b.h > 0.0 && b.h <= 1.0))
            field_error(line, "h", "outside (0,1]");
        b.appearance = vector_field(jb, "app", line);
        if (static_cast<int>(b.appearance.size()) != d_app)
            throw Error("line " + std::to_string(line) + ": field 'app' has dimension " +
                        std::to_string(b.appearance.size()) + " but header d_app is " +
                        std::to_string(d_app));
        auto comp = jb.find("component");
        if (comp != jb.end() && !comp->is_null()) {
            if (!comp->is_number_integer() || comp->get<std::int64_t>() < 0)
                field_error(line, "component", "is not a non-negative integer or null");
            b.component_id = comp->get<int>();
        }
        img.boxes.push_back(std::move(b));
    }
    return img;
}

} // namespace detail

inline void write_dataset(std::ostream& os, const Dataset& ds)
{
    nlohmann::json header;
    header["d_glob"] = ds.d_glob();
    header["d_app"] = ds.d_app();
    if (ds.num_components() > 0)
        header["num_components"] = ds.num_components();
    os << header.dump() << '\n';
    for (const auto& img : ds.images())
        os << detail::image_to_json(img).dump() << '\n';
}

inline Dataset read_dataset(std::istream& is)
{
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line))
        throw Error("line 1: missing header");
    ++lineno;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("line 1: header is not valid JSON (" + std::string(e.what()) + ")");
    }
    auto dim = [&](const char* key) {
        auto it = header.find(key);
        if (it == header.end() || !it->is_number_integer() || it->get<std::int64_t>() <= 0)
            detail::field_error(1, key, "must be a positive integer");
        return it->get<int>();
    };
    const int d_glob = dim("d_glob");
    const int d_app = dim("d_app");
    int num_components = -1;
    if (auto it = header.find("num_components"); it != header.end()) {
        if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
            detail::field_error(1, "num_components", "must be a non-negative integer");
        num_components = it->get<int>();
    }

    std::vector<ImageRecord> images;
    std::unordered_map<std::int64_t, std::size_t> seen;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error("line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
        }
        auto img = detail::image_from_json(j, lineno, d_glob, d_app);
        if (!seen.emplace(img.id, lineno).second)
            detail::field_error(lineno, "id", "duplicates image id " + std::to_string(img.id));
        if (num_components >= 0)
            for (const auto& b : img.boxes)
                if (b.component_id && *b.component_id >= num_components)
                    detail::field_error(lineno, "component", "exceeds header num_components");
        images.push_back(std::move(img));
    }
    return Dataset(std::move(images), d_glob, d_app, num_components);
}

inline Dataset load_dataset(const std::string& path)
{
    if (path.empty())
        throw IoError("empty dataset path");
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open dataset file '" + path + "'");
    return read_dataset(in);
}

inline void save_dataset(const Dataset& ds, const std::string& path)
{
    if (path.empty())
        throw IoError("empty dataset path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write dataset file '" + path + "'");
    write_dataset(out, ds);
    if (!out)
        throw IoError("write failed for '" + path + "'");
}

inline std::string dataset_to_string(const Dataset& ds)
{
    std::ostringstream os;
    write_dataset(os, ds);
    return os.str();
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Random disjoint partition into (train, test). Both parts keep input order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed)
{
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw Error("test fraction must lie in (0,1), got " + std::to_string(test_fraction));
    if (ds.size() < 2)
        throw Error("cannot split a dataset with fewer than 2 images");
    const std::size_t n = ds.size();
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {ds.subset(train), ds.subset(test)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Generator parameters. Every image belongs to a latent scene type; the scene
/// fixes the global-feature prototype and the laws of its objects' component,
/// position and size.
struct SynthConfig {
    int num_scene_types = 8;
    int num_components = 16;
    int images_per_scene = 250;
    int boxes_min = 1;
    int boxes_max = 3;
    int d_glob = 32;
    int d_app = 16;
    double noise_global = 0.1;
    double noise_app = 0.05;
    double noise_pos = 0.08;
    /// log-normal spread of box width/height around the scene median
    double noise_scale = 0.15;
    /// Dirichlet concentration of each scene's component law (small = peaky)
    double scene_concentration = 0.3;
    /// trailing global dimensions that carry no scene signal, only noise
    int nuisance_dims = 0;
    double noise_nuisance = 0.0;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (num_scene_types < 1 || num_components < 1 || images_per_scene < 1)
            throw Error("synth: scene, component and image counts must be >= 1");
        if (boxes_min < 0 || boxes_max < boxes_min || boxes_max < 1)
            throw Error("synth: invalid boxes_per_image range");
        if (d_glob < 1 || d_app < 1)
            throw Error("synth: dimensions must be >= 1");
        if (nuisance_dims < 0 || nuisance_dims >= d_glob)
            throw Error("synth: nuisance_dims must lie in [0, d_glob)");
        for (double v : {noise_global, noise_app, noise_pos, noise_scale, noise_nuisance})
            if (!(v >= 0.0) || !std::isfinite(v))
                throw Error("synth: noise levels must be finite and >= 0");
        if (!(scene_concentration > 0.0))
            throw Error("synth: scene_concentration must be > 0");
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c)
{
    j = nlohmann::json{{"num_scene_types", c.num_scene_types},
                       {"num_components", c.num_components},
                       {"images_per_scene", c.images_per_scene},
                       {"boxes_min", c.boxes_min},
                       {"boxes_max", c.boxes_max},
                       {"d_glob", c.d_glob},
                       {"d_app", c.d_app},
                       {"noise_global", c.noise_global},
                       {"noise_app", c.noise_app},
                       {"noise_pos", c.noise_pos},
                       {"noise_scale", c.noise_scale},
                       {"scene_concentration", c.scene_concentration},
                       {"nuisance_dims", c.nuisance_dims},
                       {"noise_nuisance", c.noise_nuisance},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c)
{
    SynthConfig d;
    c.num_scene_types = j.value("num_scene_types", d.num_scene_types);
    c.num_components = j.value("num_components", d.num_components);
    c.images_per_scene = j.value("images_per_scene", d.images_per_scene);
    c.boxes_min = j.value("boxes_min", d.boxes_min);
    c.boxes_max = j.value("boxes_max", d.boxes_max);
    c.d_glob = j.value("d_glob", d.d_glob);
    c.d_app = j.value("d_app", d.d_app);
    c.noise_global = j.value("noise_global", d.noise_global);
    c.noise_app = j.value("noise_app", d.noise_app);
    c.noise_pos = j.value("noise_pos", d.noise_pos);
    c.noise_scale = j.value("noise_scale", d.noise_scale);
    c.scene_concentration = j.value("scene_concentration", d.scene_concentration);
    c.nuisance_dims = j.value("nuisance_dims", d.nuisance_dims);
    c.noise_nuisance = j.value("noise_nuisance", d.noise_nuisance);
    c.seed = j.value("seed", d.seed);
}

/// Generator-side truth that the dataset itself does not carry.
struct SynthTruth {
    std::vector<int> scene_of_image;                      // indexed like Dataset::images()
    std::vector<std::vector<double>> scene_component_probs; // [scene][component]
    std::vector<std::vector<double>> scene_prototypes;      // [scene][d_glob]
    std::vector<std::vector<double>> component_prototypes;  // [component][d_app]
    std::vector<std::pair<double, double>> scene_position_mean;
    std::vector<std::pair<double, double>> scene_size_median; // (w, h)

    /// Generated image ids equal their position, so this also works on splits.
    int scene_of(std::int64_t id) const { return scene_of_image.at(static_cast<std::size_t>(id)); }
};

inline void to_json(nlohmann::json& j, const SynthTruth& t)
{
    j = nlohmann::json{{"scene_of_image", t.scene_of_image},
                       {"scene_component_probs", t.scene_component_probs},
                       {"scene_prototypes", t.scene_prototypes},
                       {"component_prototypes", t.component_prototypes},
                       {"scene_position_mean", t.scene_position_mean},
                       {"scene_size_median", t.scene_size_median}};
}

inline void from_json(const nlohmann::json& j, SynthTruth& t)
{
    j.at("scene_of_image").get_to(t.scene_of_image);
    j.at("scene_component_probs").get_to(t.scene_component_probs);
    j.at("scene_prototypes").get_to(t.scene_prototypes);
    j.at("component_prototypes").get_to(t.component_prototypes);
    j.at("scene_position_mean").get_to(t.scene_position_mean);
    j.at("scene_size_median").get_to(t.scene_size_median);
}

struct SynthOutput {
    Dataset dataset;
    SynthTruth truth;
};

namespace detail {

inline std::vector<double> unit_gaussian(Rng& rng, int dim, int active_dims)
{
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    double norm2 = 0.0;
    for (int i = 0; i < active_dims; ++i) {
        v[static_cast<std::size_t>(i)] = n01(rng);
        norm2 += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
    }
    const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
    for (auto& x : v)
        x *= inv;
    return v;
}

} // namespace detail

/// Deterministic synthetic dataset plus the latent variables that produced it.
/// Images are emitted scene by scene with ids 0..N-1.
inline SynthOutput synth_generate_with_truth(const SynthConfig& cfg)
{
    cfg.validate();
    const auto S = static_cast<std::size_t>(cfg.num_scene_types);
    const auto C = static_cast<std::size_t>(cfg.num_components);
    const int informative = cfg.d_glob - cfg.nuisance_dims;

    SynthTruth truth;
    Rng world(derive_seed(cfg.seed, "synth/world"));
    for (std::size_t c = 0; c < C; ++c)
        truth.component_prototypes.push_back(detail::unit_gaussian(world, cfg.d_app, cfg.d_app));

    std::gamma_distribution<double> gamma(cfg.scene_concentration, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t s = 0; s < S; ++s) {
        truth.scene_prototypes.push_back(detail::unit_gaussian(world, cfg.d_glob, informative));
        std::vector<double> p(C);
        double total = 0.0;
        for (auto& x : p) {
            x = gamma(world);
            total += x;
        }
        if (total <= 0.0) {
            std::fill(p.begin(), p.end(), 0.0);
            p[s % C] = 1.0;
        } else {
            for (auto& x : p)
                x /= total;
        }
        truth.scene_component_probs.push_back(std::move(p));
        truth.scene_position_mean.emplace_back(0.15 + 0.7 * u01(world), 0.15 + 0.7 * u01(world));
        truth.scene_size_median.emplace_back(0.08 + 0.3 * u01(world), 0.08 + 0.3 * u01(world));
    }

    Rng rng(derive_seed(cfg.seed, "synth/images"));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_int_distribution<int> nboxes(cfg.boxes_min, cfg.boxes_max);
    std::vector<ImageRecord> images;
    images.reserve(S * static_cast<std::size_t>(cfg.images_per_scene));
    std::int64_t next_id = 0;
    for (std::size_t s = 0; s < S; ++s) {
        std::discrete_distribution<int> component(truth.scene_component_probs[s].begin(),
                                                  truth.scene_component_probs[s].end());
        const auto [mx, my] = truth.scene_position_mean[s];
        const auto [mw, mh] = truth.scene_size_median[s];
        for (int i = 0; i < cfg.images_per_scene; ++i) {
            ImageRecord img;
            img.id = next_id++;
            img.global_features.resize(static_cast<std::size_t>(cfg.d_glob));
            for (int d = 0; d < cfg.d_glob; ++d) {
                const double sd = d < informative ? cfg.noise_global : cfg.noise_nuisance;
                img.global_features[static_cast<std::size_t>(d)] =
                    truth.scene_prototypes[s][static_cast<std::size_t>(d)] + sd * n01(rng);
            }
            const int nb = nboxes(rng);
            for (int b = 0; b < nb; ++b) {
                ObjectBox box;
                const int c = component(rng);
                box.component_id = c;
                box.appearance = truth.component_prototypes[static_cast<std::size_t>(c)];
                for (auto& a : box.appearance)
                    a += cfg.noise_app * n01(rng);
                box.cx = std::clamp(mx + cfg.noise_pos * n01(rng), 0.0, 1.0);
                box.cy = std::clamp(my + cfg.noise_pos * n01(rng), 0.0, 1.0);
                box.w = std::clamp(mw * std::exp(cfg.noise_scale * n01(rng)), 0.01, 1.0);
                box.h = std::clamp(mh * std::exp(cfg.noise_scale * n01(rng)), 0.01, 1.0);
                img.boxes.push_back(std::move(box));
            }
            images.push_back(std::move(img));
            truth.scene_of_image.push_back(static_cast<int>(s));
        }
    }
    return {Dataset(std::move(images), cfg.d_glob, cfg.d_app, cfg.num_components), std::move(truth)};
}

inline Dataset synth_generate(const SynthConfig& cfg)
{
    return synth_generate_with_truth(cfg).dataset;
}

} // namespace conf
