#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "toy_model.hpp"
#include "vulnaudit/checkpoint.hpp"
#include "vulnaudit/error.hpp"

using namespace vulnaudit;

namespace {

DenseMatrix rows(std::initializer_list<std::vector<double>> rs) {
    std::vector<double> data;
    std::size_t cols = 0;
    for (const auto& r : rs) {
        cols = r.size();
        data.insert(data.end(), r.begin(), r.end());
    }
    return DenseMatrix(rs.size(), cols, data);
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

TEST_CASE("loss oracles") {
    const std::vector<std::uint8_t> one{1};
    CHECK(std::abs(loss_kl(rows({{0.75, 0.25}}), rows({{0.25, 0.75}}), one) - 0.5 * std::log(3.0)) < 1e-12);
    CHECK(std::abs(loss_ce(rows({{0.5, 0.5}}), rows({{1.0, 0.0}}), one) - std::log(2.0)) < 1e-12);
    CHECK(loss_kl(rows({{0.2, 0.8}}), rows({{0.2, 0.8}}), one) == doctest::Approx(0.0));
    CHECK(loss_rec(rows({{1.0}, {2.0}}), rows({{0.0}, {0.0}})) == 2.5);
    CHECK(loss_rec(rows({{1.0, 3.0}}), rows({{1.0, 3.0}})) == 0.0);
    CHECK_THROWS_AS(loss_rec(rows({{1.0}}), rows({{1.0, 2.0}})), InputError);

    // Nodes without prior are ignored by the prior terms.
    const std::vector<std::uint8_t> mask{1, 0};
    const DenseMatrix p = rows({{0.75, 0.25}, {0.01, 0.99}});
    const DenseMatrix q = rows({{0.25, 0.75}, {0.0, 0.0}});
    CHECK(std::abs(loss_kl(p, q, mask) - 0.5 * std::log(3.0)) < 1e-12);
    CHECK(loss_kl(p, q, std::vector<std::uint8_t>{0, 0}) == 0.0);

    // Zero prior entries are clamped rather than producing infinities.
    CHECK(std::isfinite(loss_kl(rows({{0.5, 0.5}}), rows({{1.0, 0.0}}), one)));
}

TEST_CASE("KL term is non-negative on random simplex rows") {
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t k = 2 + rng.below(5);
        DenseMatrix p(1, k);
        DenseMatrix q(1, k);
        double sp = 0.0;
        double sq = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            p(0, i) = rng.uniform();
            q(0, i) = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
            sp += p(0, i);
            sq += q(0, i);
        }
        if (sq == 0.0) q(0, 0) = sq = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            p(0, i) /= sp;
            q(0, i) /= sq;
        }
        CHECK(loss_kl(p, q, std::vector<std::uint8_t>{1}) >= -1e-9);
    }
}

TEST_CASE("total-loss gradients match finite differences on the 5x5 toy") {
    for (std::uint64_t seed : {1u, 2u}) {
        const toy::Instance in = toy::make_instance(seed);
        REQUIRE(in.graph.node_count() == 25);
        const toy::GradCheck gc = toy::check_gradients(in);
        CHECK(gc.checked > 1000);
        CHECK(gc.max_rel_error < 1e-4);
    }
}

TEST_CASE("encoder is permutation-equivariant") {
    const toy::Instance in = toy::make_instance(3);
    const std::size_t n = in.graph.node_count();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(12);
    rng.shuffle(perm);
    const DenseMatrix a = in.batch.adjacency.to_dense();
    DenseMatrix pa(n, n);
    DenseMatrix px(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        px(i, 0) = in.batch.features(perm[i], 0);
        for (std::size_t j = 0; j < n; ++j) pa(i, j) = a(perm[i], perm[j]);
    }
    const EncoderOutput base = encode(in.params, in.batch.adjacency, in.batch.features);
    const EncoderOutput moved = encode(in.params, SparseMatrix::from_dense(pa), px);
    const DenseMatrix rec = decode(in.params, in.batch.adjacency, base.probabilities);
    const DenseMatrix moved_rec = decode(in.params, SparseMatrix::from_dense(pa), moved.probabilities);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(std::abs(moved.probabilities(i, k) - base.probabilities(perm[i], k)) < 1e-12);
        }
        CHECK(std::abs(moved_rec(i, 0) - rec(perm[i], 0)) < 1e-12);
    }
}

TEST_CASE("encoder output rows are probability vectors") {
    const toy::Instance in = toy::make_instance(4);
    const EncoderOutput enc = encode(in.params, in.batch.adjacency, in.batch.features);
    const DenseMatrix sm = softmax_rows(enc.logits);
    for (std::size_t i = 0; i < enc.probabilities.rows(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            s += enc.probabilities(i, k);
            CHECK(enc.probabilities(i, k) == sm(i, k));
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("Gumbel-Softmax samples") {
    Rng rng(31);
    const std::vector<double> logits{0.4, -1.0, 1.3};
    std::vector<double> mean_entropy;
    for (double tau : {2.0, 1.0, 0.5, 0.1}) {
        double h = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const auto s = gumbel_softmax_sample(logits, tau, rng);
            double total = 0.0;
            for (double v : s) {
                // At small tau the winning entry is within 1 ulp of 1 and rounds to it.
                if (tau >= 0.5) {
                    CHECK(v > 0.0);
                    CHECK(v < 1.0);
                } else {
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                }
                total += v;
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
            h += entropy(s);
        }
        mean_entropy.push_back(h / 10000.0);
    }
    for (std::size_t i = 1; i < mean_entropy.size(); ++i) CHECK(mean_entropy[i] <= mean_entropy[i - 1]);
    CHECK_THROWS_AS(gumbel_softmax_sample(logits, 0.0, rng), InputError);

    const DenseMatrix noise = sample_gumbel_noise(50, 4, rng);
    CHECK(noise.all_finite());
}

TEST_CASE("train_step") {
    const toy::Instance in = toy::make_instance(5);
    SUBCASE("zero learning rate leaves parameters unchanged") {
        TrainConfig cfg;
        cfg.learning_rate = 0.0;
        ModelParams p = in.params;
        AdamOptimizer opt(p);
        Rng rng(1);
        const LossBreakdown l = train_step(p, opt, in.batch, cfg, rng);
        CHECK(p == in.params);
        CHECK(std::isfinite(l.total));
        CHECK(l.total == doctest::Approx(l.rec + l.kl + l.ce));
    }
    SUBCASE("one step lowers the loss under the same noise") {
        TrainConfig cfg;
        ModelParams p = in.params;
        AdamOptimizer opt(p);
        Rng rng(2);
        Rng replay = rng;
        const DenseMatrix noise = sample_gumbel_noise(in.batch.node_count(), 3, replay);
        const LossBreakdown before = train_step(p, opt, in.batch, cfg, rng);
        CHECK(before.total == evaluate_loss(in.params, in.batch, cfg, &noise, nullptr).total);
        const LossBreakdown after = evaluate_loss(p, in.batch, cfg, &noise, nullptr);
        CHECK(after.total < before.total);
        CHECK(opt.steps() == 1);
    }
}

TEST_CASE("training loop") {
    testutil::TempDir dir("model_train");
    Rng rng(8);
    GridStack heights = make_stack(StackKind::HeightSeries, 16, 16, {"t0", "t1"});
    for (auto& g : heights.grids) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                g.at(x, y) = rng.uniform() < 0.2 ? 0.0f : static_cast<float>((x < 8 ? 3.0 : 20.0) + rng.uniform());
            }
        }
    }
    PriorField prior;
    prior.width = prior.height_px = 16;
    prior.categories = {"low", "high"};
    prior.has_prior.assign(256, 1);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            prior.proportions.push_back(x < 8 ? 0.9 : 0.1);
            prior.proportions.push_back(x < 8 ? 0.1 : 0.9);
        }
    }
    const auto tiles = tile_region(16, 16, 4);
    const SplitAssignment splits = split_tiles(tiles, prior, {}, 1, 1.0);
    std::vector<GridGraph> train_graphs;
    for (const auto& g : heights.grids) train_graphs.push_back(build_graph(g, splits.train));
    std::vector<const DenseMatrix*> feats;
    for (const auto& g : train_graphs) feats.push_back(&g.features);
    const LogNormStats stats = fit_log_norm(feats);
    const TrainingSet data = build_training_set(heights, splits, stats);
    CHECK(data.train_graphs.size() == 2);

    TrainConfig cfg;
    cfg.seed = 4;
    cfg.n_subgraphs = 2;
    const ModelParams init = ModelParams::glorot(1, 2, cfg.seed);

    SUBCASE("zero epochs returns the initialization") {
        cfg.epochs = 0;
        const TrainResult r = train(init, data, prior, cfg);
        CHECK(r.params == init);
        CHECK(r.history.empty());
    }
    SUBCASE("loss decreases and runs are reproducible") {
        cfg.epochs = 60;
        cfg.learning_rate = 1e-2;
        const TrainResult a = train(init, data, prior, cfg);
        const TrainResult b = train(init, data, prior, cfg);
        REQUIRE(a.history.size() == 60);
        CHECK(a.history.back().train.total < a.history.front().train.total);
        CHECK(a.params == b.params);
        for (std::size_t e = 0; e < a.history.size(); ++e) {
            CHECK(a.history[e].train.total == b.history[e].train.total);
            REQUIRE(a.history[e].validation.has_value());
            CHECK(a.history[e].validation->total == b.history[e].validation->total);
        }

        const PosteriorField post = infer_posterior(a.params, heights.grids[0], stats, tiles, prior.categories, "t0");
        check_simplex(post);
        for (std::size_t px = 0; px < 256; ++px) CHECK(post.valid[px] == (heights.grids[0].values[px] > 0.0f));
        const PosteriorField back = posterior_from_stack(posterior_to_stack(post), "t0");
        CHECK(back.valid == post.valid);
        check_simplex(back, 1e-5);

        Checkpoint ck{a.params, stats, prior.categories, cfg};
        round_to_f32(ck.params);
        save_checkpoint(ck, dir / "ck");
        const Checkpoint re = load_checkpoint(dir / "ck");
        CHECK(re.params == ck.params);
        CHECK(re.norm_stats == stats);
        CHECK(re.categories == prior.categories);
        CHECK(re.config.epochs == cfg.epochs);
        CHECK(re.config.learning_rate == cfg.learning_rate);
    }
    SUBCASE("prior and model must agree on K") {
        PriorField three = prior;
        three.categories.push_back("x");
        cfg.epochs = 1;
        CHECK_THROWS_AS(train(init, data, three, cfg), InputError);
    }
}

TEST_CASE("inference edge cases") {
    const ModelParams p = ModelParams::glorot(1, 3, 1);
    const LogNormStats st{{1.0}, {1.0}};
    const PosteriorField empty =
        infer_posterior(p, RasterGrid(4, 4, 0.0f), st, tile_region(4, 4, 450), {"a", "b", "c"}, "t0");
    CHECK(std::all_of(empty.valid.begin(), empty.valid.end(), [](auto v) { return v == 0; }));
    const GridStack s = posterior_to_stack(empty);
    for (const auto& g : s.grids) {
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.is_nodata(i));
    }
    CHECK_THROWS_AS(infer_posterior(p, RasterGrid(2, 2, 1.0f), st, tile_region(2, 2, 4), {"a", "b"}, "t0"), InputError);
    CHECK_THROWS_AS(infer_posterior(p, RasterGrid(2, 2, 1.0f), LogNormStats{{1, 1}, {1, 1}}, tile_region(2, 2, 4),
                                    {"a", "b", "c"}, "t0"),
                    InputError);
}

TEST_CASE("config validation and checkpoint errors") {
    TrainConfig cfg;
    cfg.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InputError);
    cfg = {};
    cfg.loss_weights.kl = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InputError);
    const TrainConfig parsed = train_config_from_json(nlohmann::json{{"epochs", 7}, {"loss_weights", {1, 0.5, 2}}});
    CHECK(parsed.epochs == 7);
    CHECK(parsed.loss_weights.kl == 0.5);
    CHECK(parsed.tau == 1.0);
    testutil::TempDir dir("model_ck");
    CHECK_THROWS_AS(load_checkpoint(dir.path()), InputError);
    CHECK(ModelParams::glorot(1, 3, 9) == ModelParams::glorot(1, 3, 9));
    CHECK_FALSE(ModelParams::glorot(1, 3, 9) == ModelParams::glorot(1, 3, 10));
}
