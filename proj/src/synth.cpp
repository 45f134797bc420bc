#include "vulnaudit/synth.hpp"

#include <array>
#include <cmath>
#include <set>

#include "vulnaudit/error.hpp"
#include "vulnaudit/rng.hpp"

namespace vulnaudit {

using nlohmann::json;

void SyntheticSpec::finalize() {
    if (categories < 2) throw InputError("synthetic spec: K must be at least 2");
    if (width < 1 || height_px < 1 || timesteps < 1) throw InputError("synthetic spec: sizes must be positive");
    if (block_size < 1 || width % block_size != 0 || height_px % block_size != 0) {
        throw InputError("synthetic spec: width and height must be multiples of block_size");
    }
    if (!(corruption >= 0.0 && corruption < 1.0)) throw InputError("synthetic spec: corruption must lie in [0, 1)");
    if (!(occupancy > 0.0 && occupancy <= 1.0)) throw InputError("synthetic spec: occupancy must lie in (0, 1]");
    if (!(turnover >= 0.0 && turnover <= 1.0)) throw InputError("synthetic spec: turnover must lie in [0, 1]");
    if (!(yearly_jitter >= 0.0)) throw InputError("synthetic spec: yearly_jitter must be non-negative");
    if (blobs_per_category < 1) throw InputError("synthetic spec: blobs_per_category must be positive");

    const auto k = static_cast<std::size_t>(categories);
    if (labels.empty()) {
        for (std::size_t c = 0; c < k; ++c) labels.push_back("C" + std::to_string(c + 1));
    }
    if (log_height_mean.empty()) {
        for (std::size_t c = 0; c < k; ++c) {
            log_height_mean.push_back(0.5 + 1.5 * static_cast<double>(c) / static_cast<double>(k - 1));
        }
    }
    if (log_height_std.empty()) log_height_std.assign(k, 0.2);
    if (labels.size() != k || log_height_mean.size() != k || log_height_std.size() != k) {
        throw InputError("synthetic spec: labels/means/stds must have K entries");
    }
    if (std::set<double>(log_height_mean.begin(), log_height_mean.end()).size() != k) {
        throw InputError("synthetic spec: category means must be distinct");
    }
    for (double s : log_height_std) {
        if (!(s >= 0.0)) throw InputError("synthetic spec: stds must be non-negative");
    }
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    SyntheticSpec s;
    try {
        s.width = j.value("width", s.width);
        s.height_px = j.value("height_px", s.height_px);
        s.timesteps = j.value("timesteps", s.timesteps);
        s.categories = j.value("K", s.categories);
        s.labels = j.value("labels", s.labels);
        s.log_height_mean = j.value("log_height_mean", s.log_height_mean);
        s.log_height_std = j.value("log_height_std", s.log_height_std);
        s.block_size = j.value("block_size", s.block_size);
        s.seed = j.value("seed", s.seed);
        s.corruption = j.value("corruption", s.corruption);
        s.occupancy = j.value("occupancy", s.occupancy);
        s.turnover = j.value("turnover", s.turnover);
        s.yearly_jitter = j.value("yearly_jitter", s.yearly_jitter);
        s.blobs_per_category = j.value("blobs_per_category", s.blobs_per_category);
    } catch (const json::exception& e) {
        throw InputError(std::string("invalid synthetic spec: ") + e.what());
    }
    s.finalize();
    return s;
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
    return json{
        {"width", s.width},
        {"height_px", s.height_px},
        {"timesteps", s.timesteps},
        {"K", s.categories},
        {"labels", s.labels},
        {"log_height_mean", s.log_height_mean},
        {"log_height_std", s.log_height_std},
        {"block_size", s.block_size},
        {"seed", s.seed},
        {"corruption", s.corruption},
        {"occupancy", s.occupancy},
        {"turnover", s.turnover},
        {"yearly_jitter", s.yearly_jitter},
        {"blobs_per_category", s.blobs_per_category},
    };
}

namespace {

std::vector<int> grow_blobs(const SyntheticSpec& spec, Rng& rng) {
    const int w = spec.width;
    const int h = spec.height_px;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<int> label(n, -1);
    std::vector<std::size_t> frontier;

    const int seeds = std::min<int>(spec.blobs_per_category * spec.categories, static_cast<int>(n));
    for (int s = 0; s < seeds; ++s) {
        std::size_t px = rng.below(n);
        while (label[px] != -1) px = rng.below(n);
        label[px] = s % spec.categories;
        frontier.push_back(px);
    }
    constexpr std::array<std::array<int, 2>, 4> steps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    while (!frontier.empty()) {
        const std::size_t pick = rng.below(frontier.size());
        const std::size_t px = frontier[pick];
        frontier[pick] = frontier.back();
        frontier.pop_back();
        const int x = static_cast<int>(px % w);
        const int y = static_cast<int>(px / w);
        for (const auto& [dx, dy] : steps) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
            if (label[q] != -1) continue;
            label[q] = label[px];
            frontier.push_back(q);
        }
    }
    return label;
}

}  // namespace

SyntheticDataset generate_synthetic(SyntheticSpec spec) {
    spec.finalize();
    Rng rng(spec.seed);
    const int w = spec.width;
    const int h = spec.height_px;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const auto k = static_cast<std::size_t>(spec.categories);

    SyntheticDataset ds;
    ds.truth = grow_blobs(spec, rng);

    std::vector<std::string> years;
    for (int t = 0; t < spec.timesteps; ++t) years.push_back("t" + std::to_string(t));
    ds.heights = make_stack(StackKind::HeightSeries, w, h, years, 0.0f);
    ds.heights.manifest.crs_note = "synthetic";

    std::vector<double> base_log(n);
    std::vector<std::uint8_t> present(n);
    std::vector<std::uint8_t> ever(n, 0);
    for (std::size_t px = 0; px < n; ++px) {
        const auto c = static_cast<std::size_t>(ds.truth[px]);
        base_log[px] = spec.log_height_mean[c] + spec.log_height_std[c] * rng.normal();
        present[px] = rng.uniform() < spec.occupancy ? 1 : 0;
    }
    for (int t = 0; t < spec.timesteps; ++t) {
        if (t > 0) {
            for (std::size_t px = 0; px < n; ++px) {
                if (rng.uniform() < spec.turnover) present[px] ^= 1;
            }
        }
        auto& layer = ds.heights.grids[static_cast<std::size_t>(t)].values;
        for (std::size_t px = 0; px < n; ++px) {
            const double jitter = spec.yearly_jitter * rng.normal();
            if (!present[px]) continue;
            ever[px] = 1;
            layer[px] = static_cast<float>(std::exp(base_log[px] + jitter));
        }
    }

    const int b = spec.block_size;
    const int cw = w / b;
    const int ch = h / b;
    ds.prior_counts = make_stack(StackKind::PriorCounts, cw, ch, spec.labels, 0.0f);
    ds.prior_counts.manifest.crs_note = "synthetic coarse prior, block " + std::to_string(b);
    for (int by = 0; by < ch; ++by) {
        for (int bx = 0; bx < cw; ++bx) {
            std::vector<double> counts(k, 0.0);
            double total = 0.0;
            for (int y = by * b; y < (by + 1) * b; ++y) {
                for (int x = bx * b; x < (bx + 1) * b; ++x) {
                    const std::size_t px = static_cast<std::size_t>(y) * w + x;
                    if (!ever[px]) continue;
                    counts[static_cast<std::size_t>(ds.truth[px])] += 1.0;
                    total += 1.0;
                }
            }
            if (rng.uniform() < spec.corruption && total > 0.0) {
                for (double& c : counts) c = static_cast<double>(rng.below(static_cast<std::uint64_t>(total) + 1));
            }
            const std::size_t cpx = static_cast<std::size_t>(by) * cw + bx;
            for (std::size_t c = 0; c < k; ++c) ds.prior_counts.grids[c].values[cpx] = static_cast<float>(counts[c]);
        }
    }

    ds.ground_truth = make_stack(StackKind::Posterior, w, h, spec.labels, kNoData);
    ds.ground_truth.manifest.crs_note = "synthetic ground truth (one-hot)";
    for (std::size_t px = 0; px < n; ++px) {
        if (!ever[px]) continue;
        for (std::size_t c = 0; c < k; ++c) {
            ds.ground_truth.grids[c].values[px] = static_cast<std::size_t>(ds.truth[px]) == c ? 1.0f : 0.0f;
        }
    }
    return ds;
}

}  // namespace vulnaudit
