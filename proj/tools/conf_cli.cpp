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

// conf: command-line driver for the experiment pipelines.
//
//   conf synth          --out DIR   generate and split data
//   conf train          --out DIR   train one forest per configured kind
//   conf eval-retrieval --out DIR   retrieval quality table
//   conf select-sweep   --out DIR   component selection sweep
//   conf rescore        --out DIR   location/scale rescoring
//   conf bench          --out DIR   query cost and memory report
//
// Every command takes --config FILE (JSON) and --seed N.

#include "conf/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace conf;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "conf_out";
    std::optional<int> trees;
    std::optional<int> workers;
};

ExperimentConfig load_config(const Options& o)
{
    ExperimentConfig cfg;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in)
            throw IoError("cannot open config '" + o.config_path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error("config '" + o.config_path + "': " + e.what());
        }
        cfg = j.get<ExperimentConfig>();
    }
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.trees)
        cfg.train.num_trees = *o.trees;
    if (o.workers)
        cfg.train.workers = *o.workers;
    cfg.validate();
    return cfg;
}

fs::path out_dir(const Options& o)
{
    fs::path p(o.out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec)
        throw IoError("cannot create output directory '" + o.out + "': " + ec.message());
    return p;
}

std::ofstream open_out(const fs::path& p)
{
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot write '" + p.string() + "'");
    return f;
}

ExperimentData load_data(const ExperimentConfig& cfg, const fs::path& dir)
{
    if (!cfg.data.train.empty())
        return prepare_data(cfg);
    if (!fs::exists(dir / "train.jsonl"))
        throw IoError("no data in '" + dir.string() + "'; run 'conf synth' first or set data paths in the config");
    return {load_dataset((dir / "train.jsonl").string()), load_dataset((dir / "val.jsonl").string()),
            load_dataset((dir / "test.jsonl").string()), {}};
}

fs::path forest_path(const fs::path& dir, PropertyKind k)
{
    return dir / ("forest_" + to_string(k) + ".conf");
}

Forest load_kind(const fs::path& dir, PropertyKind k)
{
    const auto p = forest_path(dir, k);
    if (!fs::exists(p))
        throw IoError("missing '" + p.string() + "'; run 'conf train' first");
    return load_forest(p.string());
}

void cmd_synth(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = prepare_data(cfg);
    save_dataset(data.train, (dir / "train.jsonl").string());
    save_dataset(data.val, (dir / "val.jsonl").string());
    save_dataset(data.test, (dir / "test.jsonl").string());
    if (data.truth) {
        nlohmann::json j = *data.truth;
        j["config_hash"] = config_hash(cfg);
        open_out(dir / "truth.json") << j.dump() << '\n';
    }
    std::cout << "train " << data.train.size() << ", val " << data.val.size() << ", test " << data.test.size()
              << " images -> " << dir.string() << '\n';
}

void cmd_train(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = load_data(cfg, dir);
    nlohmann::json report = {{"config_hash", config_hash(cfg)}, {"forests", nlohmann::json::array()}};
    for (auto kind : cfg.kinds) {
        const auto forest = train_kind(cfg, data.train, kind);
        save_forest(forest, forest_path(dir, kind).string());
        const auto m = memory_footprint(forest);
        int min_depth = std::numeric_limits<int>::max(), max_depth = 0;
        double sum_depth = 0.0;
        for (const auto& t : forest.trees) {
            const int d = t.depth();
            min_depth = std::min(min_depth, d);
            max_depth = std::max(max_depth, d);
            sum_depth += d;
        }
        const double mean_depth = sum_depth / static_cast<double>(forest.trees.size());
        std::cout << to_string(kind) << ": sigma " << forest.sigma.sigma << (forest.sigma.degenerate ? " (degenerate)" : "")
                  << ", depth min/mean/max " << min_depth << '/' << mean_depth << '/' << max_depth
                  << ", internal nodes/tree " << m.mean_internal_nodes_per_tree << ", footprint " << m.total
                  << " bytes (internal " << m.internal_bytes << ", leaf " << m.leaf_bytes << ")\n";
        report["forests"].push_back({{"kind", to_string(kind)},
                                     {"file", forest_path(dir, kind).filename().string()},
                                     {"sigma", forest.sigma.sigma},
                                     {"sigma_degenerate", forest.sigma.degenerate},
                                     {"num_trees", forest.trees.size()},
                                     {"depth_min", min_depth},
                                     {"depth_mean", mean_depth},
                                     {"depth_max", max_depth},
                                     {"mean_internal_nodes_per_tree", m.mean_internal_nodes_per_tree},
                                     {"internal_bytes", m.internal_bytes},
                                     {"leaf_bytes", m.leaf_bytes},
                                     {"total_bytes", m.total}});
    }
    open_out(dir / "train.json") << report.dump(2) << '\n';
}

void cmd_eval_retrieval(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = load_data(cfg, dir);
    ForestMap forests;
    for (auto kind : cfg.kinds)
        forests.emplace(kind, load_kind(dir, kind));
    const auto ev = eval_retrieval(cfg, data.train, data.test, forests);
    const auto hash = config_hash(cfg);
    {
        auto f = open_out(dir / "retrieval.csv");
        write_quality_csv(f, ev.rows, hash);
    }
    {
        auto f = open_out(dir / "retrieval_per_image.csv");
        write_quality_samples_csv(f, ev.samples, hash);
    }
    write_quality_csv(std::cout, ev.rows, hash);
}

void cmd_select_sweep(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = load_data(cfg, dir);
    const auto sweep = select_sweep(cfg, data.train, data.test, load_kind(dir, PropertyKind::Appearance));
    const auto hash = config_hash(cfg);
    {
        auto f = open_out(dir / "select_sweep.csv");
        write_sweep_csv(f, sweep, hash);
    }
    {
        auto f = open_out(dir / "selections.csv");
        write_selections_csv(f, sweep.selections, hash);
    }
    {
        auto f = open_out(dir / "speedup.csv");
        write_speedup_csv(f, sweep.speedup, hash);
    }
    write_sweep_csv(std::cout, sweep, hash);
}

void cmd_rescore(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = load_data(cfg, dir);
    const auto r = rescore(cfg, data.train, data.val, data.test, load_kind(dir, PropertyKind::Position),
                           load_kind(dir, PropertyKind::Scale));
    const auto hash = config_hash(cfg);
    {
        auto f = open_out(dir / "rescore.csv");
        write_rescore_csv(f, r, hash);
    }
    {
        auto f = open_out(dir / "rescored_detections.csv");
        write_rescored_detections_csv(f, r, hash);
    }
    write_rescore_csv(std::cout, r, hash);
}

void cmd_bench(const Options& o)
{
    const auto cfg = load_config(o);
    const auto dir = out_dir(o);
    const auto data = load_data(cfg, dir);
    ForestMap forests;
    for (auto kind : cfg.kinds)
        forests.emplace(kind, load_kind(dir, kind));
    const auto json = to_json_report(bench(cfg, data.train, data.test, forests), config_hash(cfg));
    open_out(dir / "bench.json") << json.dump(2) << '\n';
    std::cout << json.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Context forest experiments"};
    app.require_subcommand(1);
    Options opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "experiment config (JSON)");
        sub->add_option("--seed", opt.seed, "root seed, overrides the config");
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--trees", opt.trees, "trees per forest, overrides the config");
        sub->add_option("--workers", opt.workers, "training threads");
    };
    const std::pair<const char*, void (*)(const Options&)> commands[] = {
        {"synth", cmd_synth},
        {"train", cmd_train},
        {"eval-retrieval", cmd_eval_retrieval},
        {"select-sweep", cmd_select_sweep},
        {"rescore", cmd_rescore},
        {"bench", cmd_bench},
    };
    void (*run)(const Options&) = nullptr;
    for (const auto& [name, fn] : commands) {
        auto* sub = app.add_subcommand(name);
        add_common(sub);
        sub->callback([&run, f = fn] { run = f; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        run(opt);
    } catch (const std::exception& e) {
        std::cerr << "conf: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
