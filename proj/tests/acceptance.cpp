// Acceptance gate: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "posterior_fixtures.hpp"
#include "test_util.hpp"
#include "toy_model.hpp"
#include "vulnaudit/audit.hpp"
#include "vulnaudit/pipeline.hpp"

using namespace vulnaudit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(VULNAUDIT_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const toy::Instance in = toy::make_instance(seed);
        if (in.graph.node_count() != 25 || in.params.features != 1 || in.params.categories != 3) {
            return {false, "toy instance has the wrong shape"};
        }
        const toy::GradCheck gc = toy::check_gradients(in, 1e-4);
        worst = std::max(worst, gc.max_rel_error);
        checked += gc.checked;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            std::to_string(checked) + " entries, max rel err " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome metric_oracles() {
    const std::vector<double> p{0.8, 0.2};
    const std::vector<double> q{0.2, 0.8};
    const double ad = aitchison_distance(p, q);
    const double ad_oracle = fixtures::aitchison_double_loop(p, q, kDefaultAdEpsilon);
    const double ad_err = std::abs(ad - ad_oracle);
    const double ad_closed = std::abs(ad - std::sqrt(2.0) * std::log(4.0));

    const std::vector<std::uint8_t> mask{1};
    const double kl = loss_kl(DenseMatrix(1, 2, std::vector<double>{0.75, 0.25}),
                              DenseMatrix(1, 2, std::vector<double>{0.25, 0.75}), mask);
    const double kl_err = std::abs(kl - 0.5 * std::log(3.0));

    const DenseMatrix sm = softmax_rows(DenseMatrix(1, 2, std::vector<double>{0.0, std::log(3.0)}));
    const double sm_err = std::max(std::abs(sm(0, 0) - 0.25), std::abs(sm(0, 1) - 0.75));

    return {ad_err < 1e-9 && ad_closed < 1e-9 && kl_err < 1e-12 && sm_err < 1e-12,
            "AD err " + fmt("%.2g", ad_err) + ", KL err " + fmt("%.2g", kl_err) + ", softmax err " +
                fmt("%.2g", sm_err)};
}

Outcome simplex_invariants() {
    Rng rng(2718);
    // Posterior rows: encoder outputs over fuzzed inputs, 100 batches of 1000 rows.
    double worst_row = 0.0;
    std::size_t rows = 0;
    for (int batch = 0; batch < 100; ++batch) {
        const std::size_t k = 2 + rng.below(7);
        DenseMatrix logits(1000, k);
        const double scale = std::pow(10.0, -2.0 + 5.0 * rng.uniform());
        for (auto& v : logits.data()) v = scale * (2.0 * rng.uniform() - 1.0);
        const DenseMatrix p = softmax_rows(logits);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0.0;
            for (double v : p.row(r)) {
                if (!(v >= 0.0)) worst_row = 1.0;
                s += v;
            }
            worst_row = std::max(worst_row, std::abs(s - 1.0));
            ++rows;
        }
    }

    double worst_transition = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng.below(5);
        const std::size_t t = 2 + rng.below(4);
        std::vector<PosteriorField> seq;
        for (std::size_t i = 0; i < t; ++i) seq.push_back(fixtures::random_posterior(9, 7, k, rng.uniform(), rng));
        std::vector<TransitionMatrix> mats{transition_matrix(seq, TransitionMode::Averaged)};
        for (std::size_t i = 0; i + 1 < t; ++i) mats.push_back(transition_matrix({seq[i], seq[i + 1]}, TransitionMode::OneStep));
        for (const auto& tm : mats) {
            for (std::size_t r = 0; r < tm.dim(); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < tm.dim(); ++c) {
                    if (!(tm.at(r, c) >= 0.0 && tm.at(r, c) <= 1.0)) worst_transition = 1.0;
                    s += tm.at(r, c);
                }
                worst_transition = std::max(worst_transition, std::abs(s - 1.0));
            }
        }
    }

    const std::vector<double> logits{0.5, -0.7, 1.1, 0.0};
    const DenseMatrix expected = softmax_rows(DenseMatrix(1, 4, logits));
    std::vector<double> freq(4, 0.0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto s = gumbel_softmax_sample(logits, 1.0, rng);
        freq[static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin())] += 1.0 / draws;
    }
    double worst_freq = 0.0;
    for (std::size_t k = 0; k < 4; ++k) worst_freq = std::max(worst_freq, std::abs(freq[k] - expected(0, k)));

    return {rows == 100000 && worst_row <= 1e-9 && worst_transition <= 1e-9 && worst_freq <= 0.02,
            std::to_string(rows) + " rows max dev " + fmt("%.2g", worst_row) + ", transition rows max dev " +
                fmt("%.2g", worst_transition) + ", Gumbel freq max dev " + fmt("%.4f", worst_freq)};
}

Outcome structural_equivalence() {
    Rng rng(31415);
    double spmm_err = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t r = 1 + rng.below(100);
        const std::size_t c = 1 + rng.below(100);
        DenseMatrix a(r, c);
        const double density = rng.uniform() * 0.3;
        for (auto& v : a.data()) {
            if (rng.uniform() < density) v = 2.0 * rng.uniform() - 1.0;
        }
        DenseMatrix x(c, 1 + rng.below(5));
        for (auto& v : x.data()) v = 2.0 * rng.uniform() - 1.0;
        const DenseMatrix got = spmm(SparseMatrix::from_dense(a), x);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < x.cols(); ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < c; ++k) s += a(i, k) * x(k, j);
                spmm_err = std::max(spmm_err, std::abs(got(i, j) - s));
            }
        }
    }

    // Every occupancy pattern on grids up to 3x3, full and random patterns up to 5x5.
    double adj_err = 0.0;
    std::size_t graphs = 0;
    auto check_graph = [&](const RasterGrid& heights) {
        const GridGraph g = build_graph(heights, tile_region(heights.width, heights.height_px, 450));
        if (g.node_count() == 0) return;
        const std::size_t n = g.node_count();
        DenseMatrix at = g.adjacency.to_dense();
        for (std::size_t i = 0; i < n; ++i) at(i, i) += 1.0;
        std::vector<double> d(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[i] += at(i, j);
        }
        const DenseMatrix got = normalize_adjacency(g).to_dense();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                adj_err = std::max(adj_err, std::abs(got(i, j) - at(i, j) / std::sqrt(d[i] * d[j])));
            }
        }
        ++graphs;
    };
    for (int w = 1; w <= 5; ++w) {
        for (int h = 1; h <= 5; ++h) {
            const int cells = w * h;
            if (cells <= 9) {
                for (int mask = 1; mask < (1 << cells); ++mask) {
                    RasterGrid g(w, h);
                    for (int i = 0; i < cells; ++i) g.values[static_cast<std::size_t>(i)] = (mask >> i) & 1 ? 1.0f : 0.0f;
                    check_graph(g);
                }
            } else {
                check_graph(RasterGrid(w, h, 1.0f));
                for (int rep = 0; rep < 200; ++rep) {
                    RasterGrid g(w, h);
                    for (auto& v : g.values) v = rng.uniform() < 0.7 ? 1.0f : 0.0f;
                    check_graph(g);
                }
            }
        }
    }

    double avg_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng.below(5);
        const std::size_t t = 2 + rng.below(5);
        std::vector<PosteriorField> seq;
        for (std::size_t i = 0; i < t; ++i) seq.push_back(fixtures::random_posterior(8, 6, k, 0.6, rng));
        const TransitionMatrix avg = transition_matrix(seq, TransitionMode::Averaged);
        std::vector<double> mean(avg.raw.size(), 0.0);
        for (std::size_t i = 0; i + 1 < t; ++i) {
            const TransitionMatrix one = transition_matrix({seq[i], seq[i + 1]}, TransitionMode::OneStep);
            for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += one.raw[e];
        }
        for (std::size_t e = 0; e < mean.size(); ++e) {
            avg_err = std::max(avg_err, std::abs(mean[e] / static_cast<double>(t - 1) - avg.raw[e]));
        }
    }

    return {spmm_err < 1e-12 && adj_err < 1e-12 && avg_err < 1e-12,
            "spmm err " + fmt("%.2g", spmm_err) + ", adjacency err " + fmt("%.2g", adj_err) + " over " +
                std::to_string(graphs) + " graphs, averaged-raw err " + fmt("%.2g", avg_err)};
}

struct SynthRun {
    fs::path data;
    fs::path config;
    bool ok = false;
};

SynthRun run_pipeline(const fs::path& root) {
    SynthRun r;
    r.data = root / "data";
    fs::create_directories(root);
    const fs::path spec = root / "spec.json";
    testutil::spit(spec, R"({"width": 64, "height_px": 64, "timesteps": 3, "K": 3, "block_size": 8,
                             "corruption": 0.2, "seed": 42})");
    r.config = r.data / "run_config.json";
    const std::string cfg = " --config " + r.config.string();
    r.ok = run_cli("synth --spec " + spec.string() + " --out " + r.data.string()) == 0 &&
           run_cli("prepare" + cfg) == 0 && run_cli("train" + cfg) == 0 && run_cli("infer" + cfg) == 0 &&
           run_cli("audit" + cfg) == 0;
    return r;
}

Outcome synthetic_recovery(const SynthRun& run, double secs) {
    if (!run.ok) return {false, "pipeline command failed"};
    const RunConfig config = load_run_config(run.config);
    if (config.train.epochs > 500) return {false, "epoch budget exceeded"};
    const RecoveryScore s = score_recovery(config, run.data / "ground_truth");
    const double margin = s.posterior_accuracy - s.prior_accuracy;
    return {s.pixels > 0 && s.posterior_accuracy >= 0.80 && margin >= 0.10 && secs < 600.0,
            "posterior " + fmt("%.4f", s.posterior_accuracy) + " vs prior " + fmt("%.4f", s.prior_accuracy) +
                " on " + std::to_string(s.pixels) + " test node pixels, " + std::to_string(config.train.epochs) +
                " epochs, " + fmt("%.1f", secs) + " s"};
}

Outcome determinism(const SynthRun& a, const SynthRun& b) {
    if (!a.ok || !b.ok) return {false, "pipeline command failed"};
    const RunConfig ca = load_run_config(a.config);
    const RunConfig cb = load_run_config(b.config);
    std::vector<std::pair<fs::path, fs::path>> files{{layout::losses(ca), layout::losses(cb)}};
    for (const auto& e : fs::directory_iterator(layout::checkpoint(ca))) {
        files.emplace_back(e.path(), layout::checkpoint(cb) / e.path().filename());
    }
    for (const auto& e : fs::directory_iterator(layout::audit(ca))) {
        const std::string name = e.path().filename().string();
        if (name.rfind("transition_", 0) == 0 && e.path().extension() == ".csv") {
            files.emplace_back(e.path(), layout::audit(cb) / name);
        }
    }
    std::size_t compared = 0;
    for (const auto& [x, y] : files) {
        if (!fs::exists(y) || testutil::slurp(x) != testutil::slurp(y)) {
            return {false, "differs: " + x.filename().string()};
        }
        ++compared;
    }
    return {compared >= 1 + 13 + 6, std::to_string(compared) + " files byte-identical"};
}

Outcome format_round_trip() {
    Rng rng(1000);
    testutil::TempDir dir("acc_rt");
    const StackKind kinds[] = {StackKind::HeightSeries, StackKind::PriorCounts, StackKind::PriorProportions,
                               StackKind::Posterior, StackKind::AdMap, StackKind::ChangeMap};
    for (int trial = 0; trial < 1000; ++trial) {
        const StackKind kind = kinds[rng.below(6)];
        const int w = 1 + static_cast<int>(rng.below(16));
        const int h = 1 + static_cast<int>(rng.below(16));
        std::vector<std::string> labels;
        const int n = 1 + static_cast<int>(rng.below(4));
        for (int l = 0; l < n; ++l) labels.push_back("layer_" + std::to_string(l));
        GridStack s = make_stack(kind, w, h, labels);
        if (kind == StackKind::ChangeMap) {
            s.manifest.nodata = kChangeNoData;
            for (auto& g : s.grids) g.nodata = kChangeNoData;
        }
        if (rng.uniform() < 0.5) s.manifest.crs_note = "fuzz " + std::to_string(rng.next_u64());
        const bool unit = kind == StackKind::PriorProportions || kind == StackKind::Posterior;
        for (auto& g : s.grids) {
            for (auto& v : g.values) {
                const double u = rng.uniform();
                if (u < 0.1) {
                    v = g.nodata;
                } else if (kind == StackKind::ChangeMap) {
                    v = static_cast<float>(static_cast<int>(rng.below(3)) - 1);
                } else if (unit) {
                    v = static_cast<float>(rng.uniform());
                } else {
                    // Arbitrary finite non-negative floats, including subnormals and large values.
                    std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64()) & 0x7f7fffffu;
                    std::memcpy(&v, &bits, 4);
                }
            }
        }
        const fs::path sub = dir / std::to_string(trial);
        write_grid_stack(s, sub);
        const GridStack back = read_grid_stack(sub);
        if (!(back.manifest == s.manifest) || back.grids.size() != s.grids.size()) {
            return {false, "manifest mismatch at trial " + std::to_string(trial)};
        }
        for (std::size_t l = 0; l < s.grids.size(); ++l) {
            if (std::memcmp(back.grids[l].values.data(), s.grids[l].values.data(), 4 * s.grids[l].size()) != 0) {
                return {false, "layer bytes differ at trial " + std::to_string(trial)};
            }
        }
        fs::remove_all(sub);
    }
    return {true, "1000 stacks bit-exact"};
}

Outcome change_boundary() {
    const double deltas[] = {1.5, 1.5 + 1e-6, -1.5, -1.5 - 1e-6};
    const int expected[] = {0, 1, 0, -1};
    std::string got;
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
        const int c = classify_change(deltas[i], kDefaultChangeThreshold);
        ok = ok && c == expected[i];
        got += (i ? "," : "") + std::to_string(c);
    }
    // The same table through rasters (heights 10 -> 10 + delta).
    RasterGrid before(4, 1, 10.0f);
    RasterGrid after(4, 1);
    const double hs[] = {11.5, 11.5 + 1e-3, 8.5, 8.5 - 1e-3};
    for (int i = 0; i < 4; ++i) after.values[static_cast<std::size_t>(i)] = static_cast<float>(hs[i]);
    const ChangeMap cm = change_map(before, after);
    for (int i = 0; i < 4; ++i) ok = ok && cm.grid.values[static_cast<std::size_t>(i)] == static_cast<float>(expected[i]);
    return {ok, "codes {" + got + "}"};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const Outcome& o) {
        std::printf("ACCEPTANCE %d %-28s %s  (%s)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };
    auto guarded = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    report(1, "gradient correctness", guarded(gradient_correctness));
    report(2, "metric oracles", guarded(metric_oracles));
    report(3, "simplex/stochasticity", guarded(simplex_invariants));
    report(4, "structural equivalence", guarded(structural_equivalence));

    testutil::TempDir root("acceptance");
    const auto t0 = Clock::now();
    const SynthRun first = run_pipeline(root / "run_a");
    const double secs = seconds_since(t0);
    report(5, "synthetic recovery", guarded([&] { return synthetic_recovery(first, secs); }));
    const SynthRun second = run_pipeline(root / "run_b");
    report(6, "determinism", guarded([&] { return determinism(first, second); }));

    report(7, "format round-trip", guarded(format_round_trip));
    report(8, "change-map boundary", guarded(change_boundary));

    std::printf("%d of 8 acceptance criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
