#include "vulnaudit/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <thread>

#include "vulnaudit/checkpoint.hpp"
#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + file.string());
    out << text;
    if (!out) throw InputError("write failed for " + file.string());
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("malformed JSON in " + file.string() + ": " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
}

std::string fmt_loss(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

GridStack read_stack_checked(const fs::path& dir, StackKind expected, const char* role) {
    if (!fs::exists(dir)) throw InputError(std::string(role) + " not found: " + dir.string());
    GridStack s = read_grid_stack(dir);
    if (s.manifest.kind != expected) {
        throw InputError(std::string(role) + " " + dir.string() + " is " + std::string(to_string(s.manifest.kind)) +
                         ", expected " + std::string(to_string(expected)));
    }
    return s;
}

std::size_t argmax(const double* row, std::size_t k) {
    return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

json tile_json(const Tile& t, const char* split) {
    json j{{"x", t.origin_x}, {"y", t.origin_y}, {"width", t.width}, {"height", t.height}, {"split", split}};
    j["dominant"] = t.dominant_category ? json(*t.dominant_category) : json(nullptr);
    return j;
}

std::map<std::string, std::size_t> category_histogram(const std::vector<Tile>& tiles,
                                                      const std::vector<std::string>& categories) {
    std::map<std::string, std::size_t> h;
    for (const auto& c : categories) h[c] = 0;
    h[kNoneLabel] = 0;
    for (const Tile& t : tiles) {
        ++h[t.dominant_category ? categories.at(static_cast<std::size_t>(*t.dominant_category)) : kNoneLabel];
    }
    return h;
}

void echo_config(const RunConfig& config) {
    ensure_dir(config.output_dir);
    write_json(config.output_dir / "config_echo.json", run_config_to_json(config));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
    if (tile_size < 1) throw InputError("tile_size must be >= 1");
    if (upsample_factor < 1) throw InputError("upsample_factor must be >= 1");
    const double total = split_ratios.train + split_ratios.test + split_ratios.validation;
    if (std::abs(total - 1.0) > 1e-9) throw InputError("split_ratios must sum to 1");
    if (!(split_ratios.train > 0.0 && split_ratios.test > 0.0 && split_ratios.validation > 0.0)) {
        throw InputError("split_ratios must be positive");
    }
    if (!(split_tolerance >= 0.0)) throw InputError("split_tolerance must be non-negative");
    if (!(report.threshold_m > 0.0)) throw InputError("threshold_m must be positive");
    if (!(report.ad_epsilon > 0.0)) throw InputError("ad_epsilon must be positive");
    train.validate();
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig c;
    auto path_of = [&](const char* key) -> fs::path {
        if (!j.contains(key)) return {};
        fs::path p = j.at(key).get<std::string>();
        return p.is_absolute() ? p : base_dir / p;
    };
    try {
        c.height_stack = path_of("height_stack");
        c.prior_stack = path_of("prior_stack");
        c.output_dir = path_of("output_dir");
        c.tile_size = j.value("tile_size", c.tile_size);
        if (j.contains("split_ratios")) {
            const auto r = j.at("split_ratios").get<std::vector<double>>();
            if (r.size() != 3) throw InputError("split_ratios must have 3 entries (train, test, validation)");
            c.split_ratios = {r[0], r[1], r[2]};
        }
        c.split_tolerance = j.value("split_tolerance", c.split_tolerance);
        c.upsample_factor = j.value("upsample_factor", c.upsample_factor);
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("report")) {
            const auto& r = j.at("report");
            for (const auto& reg : r.value("regions", json::array())) {
                const auto v = reg.get<std::vector<int>>();
                if (v.size() != 4) throw InputError("report.regions entries must be [x, y, width, height]");
                c.report.regions.push_back({v[0], v[1], v[2], v[3]});
            }
            c.report.min_edge = r.value("min_edge", c.report.min_edge);
            c.report.threshold_m = r.value("threshold_m", c.report.threshold_m);
            c.report.ad_epsilon = r.value("ad_epsilon", c.report.ad_epsilon);
            c.report.heatmaps = r.value("heatmaps", c.report.heatmaps);
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("invalid run configuration: ") + e.what());
    }
    if (c.output_dir.empty()) throw InputError("run configuration needs output_dir");
    c.validate();
    return c;
}

json run_config_to_json(const RunConfig& c) {
    json regions = json::array();
    for (const auto& r : c.report.regions) regions.push_back({r.x, r.y, r.width, r.height});
    return json{
        {"height_stack", c.height_stack.string()},
        {"prior_stack", c.prior_stack.string()},
        {"output_dir", c.output_dir.string()},
        {"tile_size", c.tile_size},
        {"split_ratios", {c.split_ratios.train, c.split_ratios.test, c.split_ratios.validation}},
        {"split_tolerance", c.split_tolerance},
        {"upsample_factor", c.upsample_factor},
        {"train", train_config_to_json(c.train)},
        {"report",
         {{"regions", regions},
          {"min_edge", c.report.min_edge},
          {"threshold_m", c.report.threshold_m},
          {"ad_epsilon", c.report.ad_epsilon},
          {"heatmaps", c.report.heatmaps}}},
    };
}

RunConfig load_run_config(const fs::path& file) {
    if (!fs::exists(file)) throw InputError("config file not found: " + file.string());
    return run_config_from_json(read_json(file), file.parent_path());
}

PreparedSplits read_prepared_splits(const fs::path& file) {
    if (!fs::exists(file)) throw InputError("prepared splits not found (run prepare first): " + file.string());
    const json j = read_json(file);
    PreparedSplits ps;
    try {
        ps.tile_size = j.at("tile_size").get<int>();
        ps.categories = j.at("categories").get<std::vector<std::string>>();
        ps.timesteps = j.at("timesteps").get<std::vector<std::string>>();
        ps.splits.balanced = j.at("balanced").get<bool>();
        ps.splits.max_deviation = j.at("max_deviation").get<double>();
        ps.norm_stats.mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
        ps.norm_stats.stddev = j.at("norm_stats").at("std").get<std::vector<double>>();
        for (const auto& t : j.at("tiles")) {
            Tile tile;
            tile.origin_x = t.at("x").get<int>();
            tile.origin_y = t.at("y").get<int>();
            tile.width = t.at("width").get<int>();
            tile.height = t.at("height").get<int>();
            tile.size = ps.tile_size;
            if (!t.at("dominant").is_null()) tile.dominant_category = t.at("dominant").get<int>();
            const auto split = t.at("split").get<std::string>();
            if (split == "train") ps.splits.train.push_back(tile);
            else if (split == "test") ps.splits.test.push_back(tile);
            else if (split == "validation") ps.splits.validation.push_back(tile);
            else throw InputError("unknown split '" + split + "' in " + file.string());
        }
    } catch (const json::exception& e) {
        throw InputError("invalid splits file " + file.string() + ": " + e.what());
    }
    return ps;
}

PriorField load_prior(const RunConfig& config) {
    if (config.prior_stack.empty() || !fs::exists(config.prior_stack)) {
        throw InputError("prior stack not found: " + config.prior_stack.string());
    }
    const GridStack s = read_grid_stack(config.prior_stack);
    PriorField coarse;
    if (s.manifest.kind == StackKind::PriorCounts) coarse = normalize_prior_counts(s);
    else if (s.manifest.kind == StackKind::PriorProportions) coarse = prior_from_stack(s);
    else throw InputError("prior stack must be PRIOR_COUNTS or PRIOR_PROPORTIONS: " + config.prior_stack.string());
    return config.upsample_factor == 1 ? coarse : upsample_nearest(coarse, config.upsample_factor);
}

// ---------------------------------------------------------------------------
// prepare

void cmd_prepare(const RunConfig& config, std::ostream& log) {
    config.validate();
    if (config.height_stack.empty() || !fs::exists(config.height_stack)) {
        throw InputError("height stack not found: " + config.height_stack.string());
    }
    const GridStack heights = read_stack_checked(config.height_stack, StackKind::HeightSeries, "height stack");
    const PriorField prior = load_prior(config);
    if (prior.width != heights.manifest.width || prior.height_px != heights.manifest.height_px) {
        throw InputError("prior (" + std::to_string(prior.width) + "x" + std::to_string(prior.height_px) +
                         " after upsampling) does not match heights (" + std::to_string(heights.manifest.width) +
                         "x" + std::to_string(heights.manifest.height_px) + ")");
    }

    const auto tiles = tile_region(heights.manifest.width, heights.manifest.height_px, config.tile_size);
    const SplitAssignment splits =
        split_tiles(tiles, prior, config.split_ratios, config.train.seed, config.split_tolerance);

    json node_counts = json::object();
    std::size_t total_nodes = 0;
    std::vector<GridGraph> train_graphs;
    for (std::size_t t = 0; t < heights.grids.size(); ++t) {
        const auto& layer = heights.grids[t];
        GridGraph tg = build_graph(layer, splits.train);
        const std::size_t n_test = build_graph(layer, splits.test).node_count();
        const std::size_t n_val = build_graph(layer, splits.validation).node_count();
        node_counts[heights.manifest.layer_labels[t]] = {
            {"train", tg.node_count()}, {"test", n_test}, {"validation", n_val},
            {"total", tg.node_count() + n_test + n_val}};
        total_nodes += tg.node_count() + n_test + n_val;
        train_graphs.push_back(std::move(tg));
    }
    if (total_nodes == 0) throw InputError("empty region: no pixel with positive building height");
    std::vector<const DenseMatrix*> feats;
    for (const auto& g : train_graphs) feats.push_back(&g.features);
    const LogNormStats stats = fit_log_norm(feats);

    ensure_dir(layout::prepared(config));
    echo_config(config);
    write_grid_stack(prior_to_stack(prior), layout::prior(config));

    json tiles_json = json::array();
    std::vector<std::pair<const Tile*, const char*>> ordered;
    for (const auto& t : splits.train) ordered.emplace_back(&t, "train");
    for (const auto& t : splits.test) ordered.emplace_back(&t, "test");
    for (const auto& t : splits.validation) ordered.emplace_back(&t, "validation");
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return a.first->origin_y != b.first->origin_y ? a.first->origin_y < b.first->origin_y
                                                      : a.first->origin_x < b.first->origin_x;
    });
    for (const auto& [tile, split] : ordered) tiles_json.push_back(tile_json(*tile, split));
    write_json(layout::splits(config),
               json{{"tile_size", config.tile_size},
                    {"width", heights.manifest.width},
                    {"height_px", heights.manifest.height_px},
                    {"categories", prior.categories},
                    {"timesteps", heights.manifest.layer_labels},
                    {"seed", config.train.seed},
                    {"balanced", splits.balanced},
                    {"max_deviation", splits.max_deviation},
                    {"norm_stats", {{"mean", stats.mean}, {"std", stats.stddev}}},
                    {"tiles", tiles_json}});

    std::vector<Tile> every(splits.train);
    every.insert(every.end(), splits.test.begin(), splits.test.end());
    every.insert(every.end(), splits.validation.begin(), splits.validation.end());
    const std::size_t prior_pixels =
        static_cast<std::size_t>(std::count(prior.has_prior.begin(), prior.has_prior.end(), 1));
    write_json(layout::prepare_report(config),
               json{{"node_counts", node_counts},
                    {"prior_pixels", prior_pixels},
                    {"tiles", {{"train", splits.train.size()},
                               {"test", splits.test.size()},
                               {"validation", splits.validation.size()}}},
                    {"category_histogram",
                     {{"all", category_histogram(every, prior.categories)},
                      {"train", category_histogram(splits.train, prior.categories)},
                      {"test", category_histogram(splits.test, prior.categories)},
                      {"validation", category_histogram(splits.validation, prior.categories)}}},
                    {"balanced", splits.balanced},
                    {"max_deviation", splits.max_deviation}});

    // Exit self-check.
    prior_from_stack(read_grid_stack(layout::prior(config)));
    read_prepared_splits(layout::splits(config));

    log << "prepared " << every.size() << " tiles (train " << splits.train.size() << ", test "
        << splits.test.size() << ", validation " << splits.validation.size() << "), " << total_nodes
        << " building pixels over " << heights.grids.size() << " timesteps\n";
    if (!splits.balanced) {
        log << "warning: split category distribution deviates by " << splits.max_deviation
            << " (tolerance " << config.split_tolerance << ")\n";
    }
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const RunConfig& config, std::ostream& log) {
    config.validate();
    const PreparedSplits ps = read_prepared_splits(layout::splits(config));
    const PriorField prior = prior_from_stack(read_stack_checked(layout::prior(config), StackKind::PriorProportions,
                                                                 "prepared prior"));
    const GridStack heights = read_stack_checked(config.height_stack, StackKind::HeightSeries, "height stack");
    if (heights.manifest.width != prior.width || heights.manifest.height_px != prior.height_px) {
        throw InputError("height stack does not match the prepared prior");
    }
    echo_config(config);

    const TrainingSet data = build_training_set(heights, ps.splits, ps.norm_stats);
    ModelParams init = ModelParams::glorot(ps.norm_stats.mean.size(), prior.num_categories(), config.train.seed);
    TrainResult result = train(std::move(init), data, prior, config.train);
    round_to_f32(result.params);

    Checkpoint ck{result.params, ps.norm_stats, prior.categories, config.train};
    save_checkpoint(ck, layout::checkpoint(config));

    std::string csv = "epoch,split,L_rec,L_KL,L_CE,total\n";
    for (const auto& row : result.history) {
        auto emit = [&](const char* split, const LossBreakdown& l) {
            csv += std::to_string(row.epoch) + "," + split + "," + fmt_loss(l.rec) + "," + fmt_loss(l.kl) + "," +
                   fmt_loss(l.ce) + "," + fmt_loss(l.total) + "\n";
        };
        emit("train", row.train);
        if (row.validation) emit("validation", *row.validation);
    }
    write_text(layout::losses(config), csv);

    // Exit self-check.
    const Checkpoint reread = load_checkpoint(layout::checkpoint(config));
    if (!(reread.params == result.params)) throw NumericalError("checkpoint did not round-trip");

    if (result.history.empty()) {
        log << "trained 0 epochs; checkpoint holds the initialization\n";
    } else {
        const auto& last = result.history.back();
        log << "epoch " << last.epoch << " train: rec " << last.train.rec << " kl " << last.train.kl << " ce "
            << last.train.ce << " total " << last.train.total << "\n";
        if (last.validation) {
            log << "epoch " << last.epoch << " validation: total " << last.validation->total << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// infer

unsigned worker_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VULNAUDIT_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n = static_cast<unsigned>(v);
    }
    return n;
}

void cmd_infer(const RunConfig& config, const fs::path& checkpoint_dir, std::ostream& log) {
    config.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_dir);
    const GridStack heights = read_stack_checked(config.height_stack, StackKind::HeightSeries, "height stack");
    if (ck.params.features != 1) {
        throw InputError("checkpoint expects " + std::to_string(ck.params.features) +
                         " features but height stacks provide 1");
    }
    echo_config(config);
    const auto tiles = tile_region(heights.manifest.width, heights.manifest.height_px, config.tile_size);
    const auto& labels = heights.manifest.layer_labels;

    std::vector<std::exception_ptr> errors(labels.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < labels.size(); t = next++) {
            try {
                const PosteriorField post =
                    infer_posterior(ck.params, heights.grids[t], ck.norm_stats, tiles, ck.categories, labels[t]);
                check_simplex(post, 1e-9);
                const fs::path dir = layout::posteriors(config) / labels[t];
                write_grid_stack(posterior_to_stack(post), dir);
                // Exit self-check on the stored float32 values.
                check_simplex(posterior_from_stack(read_grid_stack(dir), labels[t]), 1e-5);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        }
    };
    const unsigned n_workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(std::max<std::size_t>(1, labels.size())));
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    log << "wrote " << labels.size() << " posterior stacks to " << layout::posteriors(config).string() << "\n";
}

// ---------------------------------------------------------------------------
// audit

void cmd_audit(const RunConfig& config, const fs::path& posteriors_dir, std::ostream& log) {
    config.validate();
    const GridStack heights = read_stack_checked(config.height_stack, StackKind::HeightSeries, "height stack");
    const PriorField prior = prior_from_stack(read_stack_checked(layout::prior(config), StackKind::PriorProportions,
                                                                 "prepared prior"));
    const auto& labels = heights.manifest.layer_labels;
    std::vector<PosteriorField> posts;
    for (const auto& label : labels) {
        const fs::path dir = posteriors_dir / label;
        posts.push_back(posterior_from_stack(read_stack_checked(dir, StackKind::Posterior, "posterior stack"), label));
        check_simplex(posts.back(), 1e-5);
        if (posts.back().width != prior.width || posts.back().height_px != prior.height_px) {
            throw InputError("posterior " + dir.string() + " does not match the prior dimensions");
        }
    }
    echo_config(config);
    const fs::path out = layout::audit(config);
    ensure_dir(out);
    json index{{"timesteps", labels}, {"warnings", json::array()}};
    const auto& rep = config.report;

    // Aitchison distance maps.
    json ad_entries = json::array();
    for (const auto& post : posts) {
        const AitchisonMap am = ad_map(prior, post, rep.ad_epsilon);
        for (std::size_t i = 0; i < am.grid.size(); ++i) {
            if (!am.grid.is_nodata(i) && !(am.grid.values[i] >= 0.0f)) {
                throw NumericalError("negative Aitchison distance at pixel " + std::to_string(i));
            }
        }
        GridStack s = make_stack(StackKind::AdMap, am.grid.width, am.grid.height_px, {"ad"});
        s.grids[0] = am.grid;
        s.manifest.crs_note = "timestep=" + post.timestep + "; epsilon=" + fmt_loss(am.epsilon);
        const std::string name = "ad_" + post.timestep;
        write_grid_stack(s, out / name);
        read_grid_stack(out / name);
        json entry{{"timestep", post.timestep}, {"stack", name}};
        if (rep.heatmaps) {
            write_heatmap_ppm(am.grid, out / (name + ".ppm"));
            entry["heatmap"] = name + ".ppm";
        }
        ad_entries.push_back(entry);
    }
    index["ad_maps"] = ad_entries;

    // Height change maps.
    json change_entries = json::array();
    for (std::size_t t = 0; t + 1 < labels.size(); ++t) {
        const ChangeMap cm = change_map(heights.grids[t], heights.grids[t + 1], rep.threshold_m);
        GridStack s = make_stack(StackKind::ChangeMap, cm.grid.width, cm.grid.height_px, {"change"});
        s.manifest.nodata = kChangeNoData;
        s.grids[0] = cm.grid;
        s.manifest.crs_note = "threshold_m=" + fmt_loss(cm.threshold_m);
        const std::string name = "change_" + labels[t] + "_" + labels[t + 1];
        write_grid_stack(s, out / name);
        read_grid_stack(out / name);
        json entry{{"from", labels[t]}, {"to", labels[t + 1]}, {"stack", name}};
        if (rep.heatmaps) {
            write_heatmap_ppm(cm.grid, out / (name + ".ppm"), -1.0, 1.0);
            entry["heatmap"] = name + ".ppm";
        }
        change_entries.push_back(entry);
    }
    index["change_maps"] = change_entries;

    // Regional trends.
    std::vector<Region> regions = rep.regions;
    if (regions.empty()) regions.push_back({0, 0, prior.width, prior.height_px});
    json trend_entries = json::array();
    for (std::size_t r = 0; r < regions.size(); ++r) {
        const RegionalTrend trend = regional_trend(posts, regions[r]);
        const std::string name = "trend_" + std::to_string(r) + ".csv";
        write_text(out / name, trend_to_csv(trend));
        json empty = json::array();
        for (std::size_t t = 0; t < trend.empty.size(); ++t) {
            if (trend.empty[t]) empty.push_back(trend.timesteps[t]);
        }
        trend_entries.push_back({{"region", {regions[r].x, regions[r].y, regions[r].width, regions[r].height}},
                                 {"csv", name},
                                 {"empty_timesteps", empty}});
    }
    index["trends"] = trend_entries;

    // Soft transition matrices.
    json transitions = json::array();
    auto emit_transition = [&](const TransitionMatrix& tm, const std::string& stem) {
        for (std::size_t i = 0; i < tm.dim(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < tm.dim(); ++j) row += tm.at(i, j);
            if (std::abs(row - 1.0) > 1e-9) throw NumericalError("transition row " + tm.labels[i] + " is not stochastic");
        }
        write_text(out / (stem + ".csv"), transition_to_csv(tm, true));
        write_text(out / (stem + "_raw.csv"), transition_to_csv(tm, false));
        write_text(out / (stem + ".dot"), transition_to_dot(tm, rep.min_edge));
        transitions.push_back({{"period", tm.period},
                               {"csv", stem + ".csv"},
                               {"raw_csv", stem + "_raw.csv"},
                               {"dot", stem + ".dot"},
                               {"zero_rows_set_to_none", tm.zero_rows}});
    };
    if (posts.size() < 2) {
        index["warnings"].push_back("fewer than 2 timesteps: transition outputs disabled");
        log << "warning: fewer than 2 timesteps, transition matrices skipped\n";
    } else {
        for (std::size_t t = 0; t + 1 < posts.size(); ++t) {
            emit_transition(transition_matrix({posts[t], posts[t + 1]}, TransitionMode::OneStep),
                            "transition_" + labels[t] + "_" + labels[t + 1]);
        }
        emit_transition(transition_matrix(posts, TransitionMode::Averaged), "transition_averaged");
    }
    index["transitions"] = transitions;
    write_json(out / "index.json", index);
    log << "audit written to " << out.string() << "\n";
}

// ---------------------------------------------------------------------------
// synth

void cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir, std::ostream& log) {
    const SyntheticDataset ds = generate_synthetic(spec);
    ensure_dir(out_dir);
    write_grid_stack(ds.heights, out_dir / "heights");
    write_grid_stack(ds.prior_counts, out_dir / "prior_counts");
    write_grid_stack(ds.ground_truth, out_dir / "ground_truth");
    SyntheticSpec filled = spec;
    filled.finalize();
    write_json(out_dir / "synth_spec.json", synthetic_spec_to_json(filled));

    // Ready-to-use run configuration for the generated data.
    RunConfig rc;
    rc.height_stack = "heights";
    rc.prior_stack = "prior_counts";
    rc.output_dir = "run";
    rc.upsample_factor = filled.block_size;
    rc.tile_size = filled.block_size;
    rc.train.seed = filled.seed;
    write_json(out_dir / "run_config.json", run_config_to_json(rc));

    for (const char* sub : {"heights", "prior_counts", "ground_truth"}) read_grid_stack(out_dir / sub);
    log << "synthetic dataset written to " << out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------

int run_guarded(const std::function<void()>& body, std::ostream& err) {
    try {
        body();
        return 0;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

RecoveryScore score_recovery(const RunConfig& config, const fs::path& ground_truth_dir) {
    const PreparedSplits ps = read_prepared_splits(layout::splits(config));
    const PriorField prior = prior_from_stack(read_grid_stack(layout::prior(config)));
    const PosteriorField truth = posterior_from_stack(read_grid_stack(ground_truth_dir), "truth");
    const std::size_t k = prior.num_categories();
    if (truth.num_categories() != k) throw InputError("ground truth category count differs from the prior");

    std::vector<std::uint8_t> in_test(prior.num_pixels(), 0);
    for (const Tile& t : ps.splits.test) {
        for (int y = t.origin_y; y < t.origin_y + t.height; ++y) {
            for (int x = t.origin_x; x < t.origin_x + t.width; ++x) in_test[static_cast<std::size_t>(y) * prior.width + x] = 1;
        }
    }
    RecoveryScore score;
    std::size_t post_hits = 0;
    std::size_t prior_hits = 0;
    for (const auto& label : ps.timesteps) {
        const PosteriorField post =
            posterior_from_stack(read_grid_stack(layout::posteriors(config) / label), label);
        for (std::size_t px = 0; px < post.num_pixels(); ++px) {
            if (!in_test[px] || !post.valid[px] || !truth.valid[px]) continue;
            const std::size_t want = argmax(truth.row(px), k);
            ++score.pixels;
            if (argmax(post.row(px), k) == want) ++post_hits;
            if (prior.has_prior[px] && argmax(prior.row(px), k) == want) ++prior_hits;
        }
    }
    if (score.pixels > 0) {
        score.posterior_accuracy = static_cast<double>(post_hits) / static_cast<double>(score.pixels);
        score.prior_accuracy = static_cast<double>(prior_hits) / static_cast<double>(score.pixels);
    }
    return score;
}

}  // namespace vulnaudit
