#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vulnaudit/graph_build.hpp"
#include "vulnaudit/grid_store.hpp"
#include "vulnaudit/numcore.hpp"
#include "vulnaudit/rng.hpp"
#include "vulnaudit/tape.hpp"

namespace vulnaudit {

inline constexpr std::size_t kHiddenDim = 25;
/// Lower clamp applied to probabilities before taking logs in the losses.
inline constexpr double kLogClamp = 1e-9;

/// Encoder and decoder weights of the graph categorical VAE.
///
/// Tensors are held in a fixed declared order (see kTensorNames), which is
/// also the checkpoint order and the Gradients slot order. Biases are 1 x n.
struct ModelParams {
    static constexpr std::size_t kTensorCount = 12;
    static constexpr std::array<std::string_view, kTensorCount> kTensorNames{
        "enc_w1", "enc_b1", "enc_w2", "enc_b2", "enc_w3", "enc_b3",
        "dec_w1", "dec_b1", "dec_w2", "dec_b2", "dec_w3", "dec_b3",
    };

    std::size_t features = 1;
    std::size_t categories = 2;
    std::size_t hidden = kHiddenDim;
    std::array<DenseMatrix, kTensorCount> tensors;

    /// All-zero parameters with the right shapes.
    static ModelParams zeros(std::size_t features, std::size_t categories, std::size_t hidden = kHiddenDim);
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    static ModelParams glorot(std::size_t features, std::size_t categories, std::uint64_t seed,
                              std::size_t hidden = kHiddenDim);

    /// Expected (rows, cols) of tensor `slot` for these dimensions.
    std::pair<std::size_t, std::size_t> shape(std::size_t slot) const;
    bool all_finite() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct LossWeights {
    double rec = 1.0;
    double kl = 1.0;
    double ce = 1.0;
};

struct TrainConfig {
    double tau = 1.0;
    double learning_rate = 1e-3;
    int epochs = 200;
    double edge_dropout = 0.20;
    std::size_t n_subgraphs = 0;  // 0 = default_subgraph_count()
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    /// Throws InputError on tau <= 0, negative weights, etc.
    void validate() const;
};

struct EncoderOutput {
    DenseMatrix logits;
    DenseMatrix probabilities;
};

/// Normalized adjacency, normalized features, and prior targets for one graph.
struct GraphBatch {
    SparseMatrix adjacency;
    DenseMatrix features;
    DenseMatrix prior;                // node_count x K (rows without prior are zero)
    std::vector<std::uint8_t> mask;   // 1 where the node has a prior

    std::size_t node_count() const { return features.rows(); }
};

/// `graph.features` must already be log-normalized.
GraphBatch make_batch(const GridGraph& graph, const PriorField& prior);

EncoderOutput encode(const ModelParams& params, const SparseMatrix& adjacency, const DenseMatrix& features);
DenseMatrix decode(const ModelParams& params, const SparseMatrix& adjacency, const DenseMatrix& samples);

/// Gumbel noise g = -log(-log u), u ~ U(0,1) clamped to [1e-12, 1 - 1e-12].
DenseMatrix sample_gumbel_noise(std::size_t rows, std::size_t cols, Rng& rng);
/// softmax((logits + g) / tau) for one draw of g.
std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng);

double loss_kl(const DenseMatrix& posterior, const DenseMatrix& prior, std::span<const std::uint8_t> mask);
double loss_ce(const DenseMatrix& posterior, const DenseMatrix& prior, std::span<const std::uint8_t> mask);
double loss_rec(const DenseMatrix& features, const DenseMatrix& reconstruction);

// Tape-recorded versions with hand-derived backward passes. `prior` and
// `target` are referenced by the tape and must outlive backward().
Tape::Var record_loss_kl(Tape& tape, Tape::Var posterior, const DenseMatrix& prior,
                         std::span<const std::uint8_t> mask);
Tape::Var record_loss_ce(Tape& tape, Tape::Var posterior, const DenseMatrix& prior,
                         std::span<const std::uint8_t> mask);
Tape::Var record_loss_rec(Tape& tape, Tape::Var reconstruction, const DenseMatrix& target);

struct LossBreakdown {
    double rec = 0.0;
    double kl = 0.0;
    double ce = 0.0;
    double total = 0.0;
};

/// Weighted three-term loss on one batch. With `gumbel_noise` the decoder sees
/// softmax((logits + noise) / tau); without it the decoder sees the expected
/// probabilities. Gradients are accumulated into `grads` when given.
LossBreakdown evaluate_loss(const ModelParams& params, const GraphBatch& batch, const TrainConfig& config,
                            const DenseMatrix* gumbel_noise, Gradients* grads);

class AdamOptimizer {
public:
    explicit AdamOptimizer(const ModelParams& params);
    void step(ModelParams& params, const Gradients& grads, const TrainConfig& config);
    long steps() const { return t_; }

private:
    std::array<DenseMatrix, ModelParams::kTensorCount> m_;
    std::array<DenseMatrix, ModelParams::kTensorCount> v_;
    long t_ = 0;
};

/// One Gumbel-sampled forward/backward pass plus an Adam update. Returns the
/// losses evaluated before the update.
LossBreakdown train_step(ModelParams& params, AdamOptimizer& optimizer, const GraphBatch& batch,
                         const TrainConfig& config, Rng& rng);

struct EpochLosses {
    int epoch = 0;
    LossBreakdown train;
    std::optional<LossBreakdown> validation;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLosses> history;
};

/// Per-timestep graphs with log-normalized features.
struct TrainingSet {
    std::vector<std::string> timesteps;
    std::vector<GridGraph> train_graphs;
    std::vector<GridGraph> validation_graphs;
};

/// Builds training/validation graphs for every layer of a height series and
/// applies the recorded normalization.
TrainingSet build_training_set(const GridStack& heights, const SplitAssignment& splits,
                               const LogNormStats& stats);

/// One shared parameter set trained over the subgraphs of every timestep;
/// within an epoch, timesteps are interleaved round-robin. Validation uses
/// expected probabilities and no edge dropout.
TrainResult train(ModelParams params, const TrainingSet& data, const PriorField& prior,
                  const TrainConfig& config);

/// Per-pixel category probabilities for one timestep.
struct PosteriorField {
    int width = 0;
    int height_px = 0;
    std::vector<std::string> categories;
    std::string timestep;
    std::vector<double> probabilities;  // pixel-major [pixel * K + k]
    std::vector<std::uint8_t> valid;    // 1 at node pixels

    std::size_t num_categories() const { return categories.size(); }
    std::size_t num_pixels() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height_px);
    }
    const double* row(std::size_t pixel) const { return probabilities.data() + pixel * num_categories(); }
};

/// Encodes the full-region graph of one height raster and scatters the
/// probabilities back to pixels. Non-node pixels are invalid.
PosteriorField infer_posterior(const ModelParams& params, const RasterGrid& heights, const LogNormStats& stats,
                               const std::vector<Tile>& tiles, std::vector<std::string> categories,
                               std::string timestep);

/// Throws InputError unless every valid row is a simplex vector within `tol`.
void check_simplex(const PosteriorField& posterior, double tol = 1e-9);

/// POSTERIOR stack (one layer per category; the timestep goes in crs_note).
GridStack posterior_to_stack(const PosteriorField& posterior);
PosteriorField posterior_from_stack(const GridStack& stack, std::string timestep);

}  // namespace vulnaudit
