#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vulnaudit/graph_build.hpp"
#include "vulnaudit/model.hpp"
#include "vulnaudit/rng.hpp"

namespace toy {

using namespace vulnaudit;

struct Instance {
    GridGraph graph;
    PriorField prior;
    GraphBatch batch;
    ModelParams params;
    DenseMatrix noise;
};

// Sign pattern of every hidden ReLU input, recomputed densely from the layer
// definition.
inline std::vector<bool> relu_signs(const Instance& in, const ModelParams& params) {
    const DenseMatrix a = in.batch.adjacency.to_dense();
    std::vector<bool> signs;
    auto layer = [&](const DenseMatrix& h, std::size_t slot, bool activate) {
        DenseMatrix z = matmul(matmul(a, h), params.tensors[slot]);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            for (std::size_t j = 0; j < z.cols(); ++j) {
                z(i, j) += params.tensors[slot + 1](0, j);
                if (activate) {
                    signs.push_back(z(i, j) > 0.0);
                    z(i, j) = std::max(0.0, z(i, j));
                }
            }
        }
        return z;
    };
    DenseMatrix logits = layer(layer(layer(in.batch.features, 0, true), 2, true), 4, false);
    logits += in.noise;
    layer(layer(softmax_rows(logits), 6, true), 8, true);
    return signs;
}

// True when no single-entry perturbation by +-h flips a ReLU input, i.e. the
// loss is smooth on every central-difference stencil.
inline bool stencils_smooth(const Instance& in, double h) {
    const std::vector<bool> base = relu_signs(in, in.params);
    ModelParams probe = in.params;
    for (auto& t : probe.tensors) {
        for (double& v : t.data()) {
            const double keep = v;
            for (double step : {h, -h}) {
                v = keep + step;
                if (relu_signs(in, probe) != base) {
                    v = keep;
                    return false;
                }
            }
            v = keep;
        }
    }
    return true;
}

// 5x5 fully built grid, F = 1, K = 3, prior on every pixel. Biases are redrawn
// until the loss is smooth on all stencils of step `h`.
inline Instance make_instance(std::uint64_t seed, double h = 1e-4) {
    Rng rng(seed);
    RasterGrid heights(5, 5);
    for (auto& v : heights.values) v = static_cast<float>(2.0 + 25.0 * rng.uniform());
    Instance in;
    in.graph = build_graph(heights, tile_region(5, 5, 450));
    in.graph.features = apply_log_norm(in.graph.features, fit_log_norm({&in.graph.features}));

    in.prior.width = 5;
    in.prior.height_px = 5;
    in.prior.categories = {"A", "B", "C"};
    in.prior.has_prior.assign(25, 1);
    for (std::size_t px = 0; px < 25; ++px) {
        double row[3];
        double total = 0.0;
        for (double& r : row) {
            r = 0.05 + rng.uniform();
            total += r;
        }
        for (double r : row) in.prior.proportions.push_back(r / total);
    }
    in.batch = make_batch(in.graph, in.prior);
    in.params = ModelParams::glorot(1, 3, seed);
    in.noise = sample_gumbel_noise(25, 3, rng);
    do {
        for (std::size_t s = 1; s < ModelParams::kTensorCount; s += 2) {
            for (auto& v : in.params.tensors[s].data()) v = 0.2 * (2.0 * rng.uniform() - 1.0);
        }
    } while (!stencils_smooth(in, h));
    return in;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Central differences of the total loss against every parameter entry.
inline GradCheck check_gradients(const Instance& in, double h = 1e-4) {
    TrainConfig cfg;
    Gradients grads(ModelParams::kTensorCount);
    evaluate_loss(in.params, in.batch, cfg, &in.noise, &grads);
    ModelParams probe = in.params;
    GradCheck out;
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        for (std::size_t i = 0; i < probe.tensors[s].size(); ++i) {
            double& v = probe.tensors[s].data()[i];
            const double keep = v;
            v = keep + h;
            const double up = evaluate_loss(probe, in.batch, cfg, &in.noise, nullptr).total;
            v = keep - h;
            const double down = evaluate_loss(probe, in.batch, cfg, &in.noise, nullptr).total;
            v = keep;
            const double fd = (up - down) / (2.0 * h);
            const double g = grads[s].data()[i];
            out.max_rel_error = std::max(out.max_rel_error, std::abs(g - fd) / std::max(1.0, std::abs(g)));
            ++out.checked;
        }
    }
    return out;
}

}  // namespace toy
