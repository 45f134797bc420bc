#include "vulnaudit/model.hpp"

#include <algorithm>
#include <cmath>

#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace {

enum Slot : std::size_t {
    kEncW1, kEncB1, kEncW2, kEncB2, kEncW3, kEncB3,
    kDecW1, kDecB1, kDecW2, kDecB2, kDecW3, kDecB3,
};

// Three GCN layers starting at tensor slot `first`: ReLU after the first two,
// linear output.
Tape::Var gcn_stack(Tape& tape, const std::array<Tape::Var, ModelParams::kTensorCount>& p, std::size_t first,
                    const SparseMatrix& adjacency, Tape::Var input, std::string_view prefix) {
    const std::string pre(prefix);
    Tape::Var h = input;
    for (std::size_t layer = 0; layer < 3; ++layer) {
        const std::string tag = pre + std::to_string(layer + 1);
        h = tape.spmm(adjacency, h, tag + ".propagate");
        h = tape.matmul(h, p[first + 2 * layer], tag + ".weight");
        h = tape.add_bias(h, p[first + 2 * layer + 1], tag + ".bias");
        if (layer < 2) h = tape.relu(h, tag + ".relu");
    }
    return h;
}

std::array<Tape::Var, ModelParams::kTensorCount> register_params(Tape& tape, const ModelParams& params) {
    std::array<Tape::Var, ModelParams::kTensorCount> vars;
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        vars[s] = tape.parameter(params.tensors[s], s, std::string(ModelParams::kTensorNames[s]));
    }
    return vars;
}

void check_shapes(const ModelParams& params, const SparseMatrix& adjacency, const DenseMatrix& input,
                  std::size_t expected_cols, const char* what) {
    if (input.rows() != adjacency.rows || adjacency.rows != adjacency.cols) {
        throw InputError(std::string(what) + ": input rows do not match the adjacency");
    }
    if (input.cols() != expected_cols) {
        throw InputError(std::string(what) + ": expected " + std::to_string(expected_cols) +
                         " input columns, got " + std::to_string(input.cols()));
    }
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        const auto [r, c] = params.shape(s);
        if (params.tensors[s].rows() != r || params.tensors[s].cols() != c) {
            throw InputError(std::string(what) + ": parameter " + std::string(ModelParams::kTensorNames[s]) +
                             " has the wrong shape");
        }
    }
}

std::size_t masked_count(std::span<const std::uint8_t> mask) {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

void check_loss_shapes(const DenseMatrix& posterior, const DenseMatrix& prior, std::span<const std::uint8_t> mask) {
    if (posterior.rows() != prior.rows() || posterior.cols() != prior.cols() || mask.size() != posterior.rows()) {
        throw InputError("loss: posterior, prior and mask shapes differ");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

std::pair<std::size_t, std::size_t> ModelParams::shape(std::size_t slot) const {
    const std::size_t f = features, k = categories, h = hidden;
    switch (slot) {
        case kEncW1: return {f, h};
        case kEncW2: return {h, h};
        case kEncW3: return {h, k};
        case kEncB1: case kEncB2: return {1, h};
        case kEncB3: return {1, k};
        case kDecW1: return {k, h};
        case kDecW2: return {h, h};
        case kDecW3: return {h, f};
        case kDecB1: case kDecB2: return {1, h};
        case kDecB3: return {1, f};
        default: throw std::out_of_range("ModelParams::shape: bad slot");
    }
}

ModelParams ModelParams::zeros(std::size_t features, std::size_t categories, std::size_t hidden) {
    if (features == 0 || hidden == 0) throw InputError("model dimensions must be positive");
    if (categories < 2) throw InputError("model needs at least 2 categories");
    ModelParams p;
    p.features = features;
    p.categories = categories;
    p.hidden = hidden;
    for (std::size_t s = 0; s < kTensorCount; ++s) {
        const auto [r, c] = p.shape(s);
        p.tensors[s] = DenseMatrix(r, c);
    }
    return p;
}

ModelParams ModelParams::glorot(std::size_t features, std::size_t categories, std::uint64_t seed,
                                std::size_t hidden) {
    ModelParams p = zeros(features, categories, hidden);
    Rng rng(derive_seed(seed, 0x9107));
    for (std::size_t s = 0; s < kTensorCount; s += 2) {
        DenseMatrix& w = p.tensors[s];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
    }
    return p;
}

bool ModelParams::all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const DenseMatrix& t) { return t.all_finite(); });
}

void TrainConfig::validate() const {
    if (!(tau > 0.0)) throw InputError("tau must be positive");
    if (!(learning_rate >= 0.0)) throw InputError("learning_rate must be non-negative");
    if (epochs < 0) throw InputError("epochs must be non-negative");
    if (!(edge_dropout >= 0.0 && edge_dropout < 1.0)) throw InputError("edge_dropout must lie in [0, 1)");
    if (!(loss_weights.rec >= 0.0 && loss_weights.kl >= 0.0 && loss_weights.ce >= 0.0)) {
        throw InputError("loss weights must be non-negative");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw InputError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw InputError("adam_eps must be positive");
}

// ---------------------------------------------------------------------------
// Forward passes

GraphBatch make_batch(const GridGraph& graph, const PriorField& prior) {
    if (graph.raster_width != prior.width || graph.raster_height != prior.height_px) {
        throw InputError("graph raster and prior dimensions differ");
    }
    GraphBatch b;
    b.adjacency = normalize_adjacency(graph);
    b.features = graph.features;
    const std::size_t k = prior.num_categories();
    b.prior = DenseMatrix(graph.node_count(), k);
    b.mask.assign(graph.node_count(), 0);
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        const auto [x, y] = graph.node_pixels[i];
        const std::size_t px = static_cast<std::size_t>(y) * prior.width + x;
        if (!prior.has_prior[px]) continue;
        b.mask[i] = 1;
        std::copy_n(prior.row(px), k, b.prior.row(i).begin());
    }
    return b;
}

EncoderOutput encode(const ModelParams& params, const SparseMatrix& adjacency, const DenseMatrix& features) {
    check_shapes(params, adjacency, features, params.features, "encode");
    Tape tape;
    const auto p = register_params(tape, params);
    const auto x = tape.constant(features, "features");
    const auto logits = gcn_stack(tape, p, kEncW1, adjacency, x, "enc");
    EncoderOutput out;
    out.logits = tape.value(logits);
    out.probabilities = softmax_rows(out.logits);
    return out;
}

DenseMatrix decode(const ModelParams& params, const SparseMatrix& adjacency, const DenseMatrix& samples) {
    check_shapes(params, adjacency, samples, params.categories, "decode");
    Tape tape;
    const auto p = register_params(tape, params);
    const auto v = tape.constant(samples, "samples");
    return tape.value(gcn_stack(tape, p, kDecW1, adjacency, v, "dec"));
}

DenseMatrix sample_gumbel_noise(std::size_t rows, std::size_t cols, Rng& rng) {
    DenseMatrix g(rows, cols);
    for (double& v : g.data()) {
        const double u = std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12);
        v = -std::log(-std::log(u));
    }
    return g;
}

std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw InputError("gumbel_softmax_sample: tau must be positive");
    const DenseMatrix noise = sample_gumbel_noise(1, logits.size(), rng);
    DenseMatrix scaled(1, logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) scaled(0, k) = (logits[k] + noise(0, k)) / tau;
    const DenseMatrix p = softmax_rows(scaled);
    return p.data();
}

// ---------------------------------------------------------------------------
// Losses

double loss_kl(const DenseMatrix& posterior, const DenseMatrix& prior, std::span<const std::uint8_t> mask) {
    check_loss_shapes(posterior, prior, mask);
    const std::size_t n = masked_count(mask);
    if (n == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < posterior.rows(); ++i) {
        if (!mask[i]) continue;
        for (std::size_t k = 0; k < posterior.cols(); ++k) {
            const double p = posterior(i, k);
            total += p * (std::log(std::max(p, kLogClamp)) - std::log(std::max(prior(i, k), kLogClamp)));
        }
    }
    return total / static_cast<double>(n);
}

double loss_ce(const DenseMatrix& posterior, const DenseMatrix& prior, std::span<const std::uint8_t> mask) {
    check_loss_shapes(posterior, prior, mask);
    const std::size_t n = masked_count(mask);
    if (n == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < posterior.rows(); ++i) {
        if (!mask[i]) continue;
        for (std::size_t k = 0; k < posterior.cols(); ++k) {
            total -= prior(i, k) * std::log(std::max(posterior(i, k), kLogClamp));
        }
    }
    return total / static_cast<double>(n);
}

double loss_rec(const DenseMatrix& features, const DenseMatrix& reconstruction) {
    if (features.rows() != reconstruction.rows() || features.cols() != reconstruction.cols()) {
        throw InputError("loss_rec: shape mismatch");
    }
    if (features.size() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double d = features.data()[i] - reconstruction.data()[i];
        total += d * d;
    }
    return total / static_cast<double>(features.size());
}

Tape::Var record_loss_kl(Tape& tape, Tape::Var posterior, const DenseMatrix& prior,
                         std::span<const std::uint8_t> mask) {
    const DenseMatrix& p = tape.value(posterior);
    const double value = loss_kl(p, prior, mask);
    const std::size_t n = masked_count(mask);
    return tape.record(
        {posterior}, DenseMatrix(1, 1, value),
        [&tape, posterior, &prior, mask, n](const DenseMatrix& g) {
            const DenseMatrix& post = tape.value(posterior);
            DenseMatrix d(post.rows(), post.cols());
            if (n == 0) return std::vector<DenseMatrix>{std::move(d)};
            const double scale = g(0, 0) / static_cast<double>(n);
            for (std::size_t i = 0; i < post.rows(); ++i) {
                if (!mask[i]) continue;
                for (std::size_t k = 0; k < post.cols(); ++k) {
                    const double pv = post(i, k);
                    const double term = std::log(std::max(pv, kLogClamp)) -
                                        std::log(std::max(prior(i, k), kLogClamp)) + (pv > kLogClamp ? 1.0 : 0.0);
                    d(i, k) = scale * term;
                }
            }
            return std::vector<DenseMatrix>{std::move(d)};
        },
        "loss_kl");
}

Tape::Var record_loss_ce(Tape& tape, Tape::Var posterior, const DenseMatrix& prior,
                         std::span<const std::uint8_t> mask) {
    const double value = loss_ce(tape.value(posterior), prior, mask);
    const std::size_t n = masked_count(mask);
    return tape.record(
        {posterior}, DenseMatrix(1, 1, value),
        [&tape, posterior, &prior, mask, n](const DenseMatrix& g) {
            const DenseMatrix& post = tape.value(posterior);
            DenseMatrix d(post.rows(), post.cols());
            if (n == 0) return std::vector<DenseMatrix>{std::move(d)};
            const double scale = g(0, 0) / static_cast<double>(n);
            for (std::size_t i = 0; i < post.rows(); ++i) {
                if (!mask[i]) continue;
                for (std::size_t k = 0; k < post.cols(); ++k) {
                    const double pv = post(i, k);
                    if (pv > kLogClamp) d(i, k) = -scale * prior(i, k) / pv;
                }
            }
            return std::vector<DenseMatrix>{std::move(d)};
        },
        "loss_ce");
}

Tape::Var record_loss_rec(Tape& tape, Tape::Var reconstruction, const DenseMatrix& target) {
    const double value = loss_rec(target, tape.value(reconstruction));
    return tape.record(
        {reconstruction}, DenseMatrix(1, 1, value),
        [&tape, reconstruction, &target](const DenseMatrix& g) {
            const DenseMatrix& rec = tape.value(reconstruction);
            DenseMatrix d(rec.rows(), rec.cols());
            if (rec.size() == 0) return std::vector<DenseMatrix>{std::move(d)};
            const double scale = 2.0 * g(0, 0) / static_cast<double>(rec.size());
            for (std::size_t i = 0; i < rec.size(); ++i) {
                d.data()[i] = scale * (rec.data()[i] - target.data()[i]);
            }
            return std::vector<DenseMatrix>{std::move(d)};
        },
        "loss_rec");
}

LossBreakdown evaluate_loss(const ModelParams& params, const GraphBatch& batch, const TrainConfig& config,
                            const DenseMatrix* gumbel_noise, Gradients* grads) {
    check_shapes(params, batch.adjacency, batch.features, params.features, "evaluate_loss");
    Tape tape;
    const auto p = register_params(tape, params);
    const auto x = tape.constant(batch.features, "features");
    const auto logits = gcn_stack(tape, p, kEncW1, batch.adjacency, x, "enc");
    const auto probs = tape.softmax_rows(logits, "posterior");

    Tape::Var latent = probs;
    if (gumbel_noise != nullptr) {
        const auto noise = tape.constant(*gumbel_noise, "gumbel_noise");
        const auto perturbed = tape.add(logits, noise, "gumbel.perturb");
        latent = tape.softmax_rows(tape.scale(perturbed, 1.0 / config.tau, "gumbel.temperature"), "gumbel.sample");
    }
    const auto recon = gcn_stack(tape, p, kDecW1, batch.adjacency, latent, "dec");

    const auto l_rec = record_loss_rec(tape, recon, batch.features);
    const auto l_kl = record_loss_kl(tape, probs, batch.prior, batch.mask);
    const auto l_ce = record_loss_ce(tape, probs, batch.prior, batch.mask);
    const auto& w = config.loss_weights;
    const auto total = tape.add(tape.add(tape.scale(l_rec, w.rec), tape.scale(l_kl, w.kl)),
                                tape.scale(l_ce, w.ce), "loss_total");

    LossBreakdown out{tape.scalar(l_rec), tape.scalar(l_kl), tape.scalar(l_ce), tape.scalar(total)};
    if (grads != nullptr) tape.backward(total, *grads);
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

AdamOptimizer::AdamOptimizer(const ModelParams& params) {
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        m_[s] = DenseMatrix(params.tensors[s].rows(), params.tensors[s].cols());
        v_[s] = m_[s];
    }
}

void AdamOptimizer::step(ModelParams& params, const Gradients& grads, const TrainConfig& config) {
    ++t_;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        const DenseMatrix& g = grads[s];
        if (g.size() == 0) continue;
        auto& theta = params.tensors[s].data();
        auto& m = m_[s].data();
        auto& v = v_[s].data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            theta[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }
}

LossBreakdown train_step(ModelParams& params, AdamOptimizer& optimizer, const GraphBatch& batch,
                         const TrainConfig& config, Rng& rng) {
    if (batch.node_count() == 0) throw InputError("train_step: empty subgraph");
    const DenseMatrix noise = sample_gumbel_noise(batch.node_count(), params.categories, rng);
    Gradients grads(ModelParams::kTensorCount);
    const LossBreakdown losses = evaluate_loss(params, batch, config, &noise, &grads);
    if (!std::isfinite(losses.total)) throw NumericalError("non-finite values in loss_total");
    optimizer.step(params, grads, config);
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        require_finite(params.tensors[s], std::string(ModelParams::kTensorNames[s]) + " after update");
    }
    return losses;
}

TrainingSet build_training_set(const GridStack& heights, const SplitAssignment& splits,
                               const LogNormStats& stats) {
    TrainingSet set;
    set.timesteps = heights.manifest.layer_labels;
    for (const RasterGrid& layer : heights.grids) {
        GridGraph tg = build_graph(layer, splits.train);
        tg.features = apply_log_norm(tg.features, stats);
        GridGraph vg = build_graph(layer, splits.validation);
        vg.features = apply_log_norm(vg.features, stats);
        set.train_graphs.push_back(std::move(tg));
        set.validation_graphs.push_back(std::move(vg));
    }
    return set;
}

namespace {

struct LossAccumulator {
    LossBreakdown sum;
    double weight = 0.0;

    void add(const LossBreakdown& l, double w) {
        sum.rec += w * l.rec;
        sum.kl += w * l.kl;
        sum.ce += w * l.ce;
        sum.total += w * l.total;
        weight += w;
    }
    LossBreakdown mean() const {
        if (weight == 0.0) return {};
        return {sum.rec / weight, sum.kl / weight, sum.ce / weight, sum.total / weight};
    }
};

}  // namespace

TrainResult train(ModelParams params, const TrainingSet& data, const PriorField& prior,
                  const TrainConfig& config) {
    config.validate();
    if (prior.num_categories() != params.categories) {
        throw InputError("prior has " + std::to_string(prior.num_categories()) + " categories, model has " +
                         std::to_string(params.categories));
    }
    std::size_t total_nodes = 0;
    for (const auto& g : data.train_graphs) total_nodes += g.node_count();
    if (total_nodes == 0) throw InputError("empty training set: no training tile has building pixels");

    TrainResult result{std::move(params), {}};
    if (config.epochs == 0) return result;

    std::vector<GraphBatch> validation;
    for (const auto& g : data.validation_graphs) {
        if (g.node_count() > 0) validation.push_back(make_batch(g, prior));
    }

    AdamOptimizer optimizer(result.params);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::vector<GraphBatch>> per_timestep;
        std::size_t max_parts = 0;
        for (std::size_t t = 0; t < data.train_graphs.size(); ++t) {
            const GridGraph& g = data.train_graphs[t];
            std::vector<GraphBatch> batches;
            if (g.node_count() > 0) {
                const std::size_t parts = std::min(
                    g.node_count(), config.n_subgraphs > 0 ? config.n_subgraphs : default_subgraph_count(g.node_count()));
                const EpochSample sample =
                    sample_epoch(g, parts, config.edge_dropout, derive_seed(config.seed, static_cast<std::uint64_t>(epoch), t + 1));
                for (const auto& sub : sample.subgraphs) batches.push_back(make_batch(sub, prior));
            }
            max_parts = std::max(max_parts, batches.size());
            per_timestep.push_back(std::move(batches));
        }

        Rng noise_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 0));
        LossAccumulator train_acc;
        for (std::size_t part = 0; part < max_parts; ++part) {
            for (std::size_t t = 0; t < per_timestep.size(); ++t) {
                if (part >= per_timestep[t].size()) continue;
                const GraphBatch& batch = per_timestep[t][part];
                LossBreakdown l;
                try {
                    l = train_step(result.params, optimizer, batch, config, noise_rng);
                } catch (const NumericalError& e) {
                    throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", timestep " +
                                         (t < data.timesteps.size() ? data.timesteps[t] : std::to_string(t)) +
                                         ", subgraph " + std::to_string(part) + ")");
                }
                train_acc.add(l, static_cast<double>(batch.node_count()));
            }
        }

        EpochLosses row;
        row.epoch = epoch;
        row.train = train_acc.mean();
        if (!validation.empty()) {
            LossAccumulator val_acc;
            for (const auto& b : validation) {
                val_acc.add(evaluate_loss(result.params, b, config, nullptr, nullptr),
                            static_cast<double>(b.node_count()));
            }
            row.validation = val_acc.mean();
        }
        result.history.push_back(row);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Inference

PosteriorField infer_posterior(const ModelParams& params, const RasterGrid& heights, const LogNormStats& stats,
                               const std::vector<Tile>& tiles, std::vector<std::string> categories,
                               std::string timestep) {
    if (categories.size() != params.categories) {
        throw InputError("infer_posterior: " + std::to_string(categories.size()) + " category labels for a " +
                         std::to_string(params.categories) + "-category model");
    }
    if (stats.mean.size() != params.features) {
        throw InputError("infer_posterior: normalization has " + std::to_string(stats.mean.size()) +
                         " features, model expects " + std::to_string(params.features));
    }
    GridGraph g = build_graph(heights, tiles);
    g.features = apply_log_norm(g.features, stats);

    PosteriorField out;
    out.width = heights.width;
    out.height_px = heights.height_px;
    out.categories = std::move(categories);
    out.timestep = std::move(timestep);
    const std::size_t k = params.categories;
    out.probabilities.assign(out.num_pixels() * k, 0.0);
    out.valid.assign(out.num_pixels(), 0);
    if (g.node_count() == 0) return out;

    const SparseMatrix adj = normalize_adjacency(g);
    const EncoderOutput enc = encode(params, adj, g.features);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const std::size_t px = heights.index(g.node_pixels[i].x, g.node_pixels[i].y);
        out.valid[px] = 1;
        std::copy_n(enc.probabilities.row(i).begin(), k, out.probabilities.begin() + px * k);
    }
    return out;
}

void check_simplex(const PosteriorField& posterior, double tol) {
    const std::size_t k = posterior.num_categories();
    for (std::size_t px = 0; px < posterior.num_pixels(); ++px) {
        if (!posterior.valid[px]) continue;
        double total = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double v = posterior.row(px)[c];
            if (!(v >= 0.0 && v <= 1.0)) throw InputError("posterior entry outside [0,1] at pixel " + std::to_string(px));
            total += v;
        }
        if (std::abs(total - 1.0) > tol) {
            throw InputError("posterior row at pixel " + std::to_string(px) + " sums to " + std::to_string(total));
        }
    }
}

GridStack posterior_to_stack(const PosteriorField& posterior) {
    GridStack s = make_stack(StackKind::Posterior, posterior.width, posterior.height_px, posterior.categories, kNoData);
    s.manifest.crs_note = "timestep=" + posterior.timestep;
    const std::size_t k = posterior.num_categories();
    for (std::size_t px = 0; px < posterior.num_pixels(); ++px) {
        if (!posterior.valid[px]) continue;
        for (std::size_t c = 0; c < k; ++c) s.grids[c].values[px] = static_cast<float>(posterior.row(px)[c]);
    }
    return s;
}

PosteriorField posterior_from_stack(const GridStack& stack, std::string timestep) {
    stack.validate();
    if (stack.manifest.kind != StackKind::Posterior) {
        throw InputError("expected a POSTERIOR stack, got " + std::string(to_string(stack.manifest.kind)));
    }
    PosteriorField p;
    p.width = stack.manifest.width;
    p.height_px = stack.manifest.height_px;
    p.categories = stack.manifest.layer_labels;
    p.timestep = std::move(timestep);
    const std::size_t k = p.num_categories();
    p.probabilities.assign(p.num_pixels() * k, 0.0);
    p.valid.assign(p.num_pixels(), 0);
    for (std::size_t px = 0; px < p.num_pixels(); ++px) {
        bool valid = true;
        for (std::size_t c = 0; c < k; ++c) {
            if (stack.grids[c].is_nodata(px)) valid = false;
        }
        if (!valid) continue;
        p.valid[px] = 1;
        for (std::size_t c = 0; c < k; ++c) p.probabilities[px * k + c] = stack.grids[c].values[px];
    }
    return p;
}

}  // namespace vulnaudit
