#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vulnaudit/grid_store.hpp"

namespace vulnaudit {

/// Parameters of a planted-category height series for desk-scale checks.
struct SyntheticSpec {
    int width = 64;
    int height_px = 64;
    int timesteps = 3;
    int categories = 3;
    std::vector<std::string> labels;          // default C1..CK
    std::vector<double> log_height_mean;      // default evenly spaced over [0.5, 2.0]
    std::vector<double> log_height_std;       // default 0.2 each
    int block_size = 8;                       // coarse prior cell, in fine pixels
    std::uint64_t seed = 42;
    double corruption = 0.2;                  // fraction of prior blocks with resampled counts
    double occupancy = 0.7;                   // P(building) per pixel at the first timestep
    double turnover = 0.03;                   // P(presence flips) per pixel per step
    double yearly_jitter = 0.05;              // std of per-step log-height noise
    int blobs_per_category = 4;

    /// Fills defaults for empty vectors and throws InputError on invalid values.
    void finalize();
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

struct SyntheticDataset {
    GridStack heights;       // HEIGHT_SERIES, labels t0..t{T-1}
    GridStack prior_counts;  // PRIOR_COUNTS at coarse resolution
    GridStack ground_truth;  // POSTERIOR one-hot; nodata where no building ever stood
    std::vector<int> truth;  // planted category per fine pixel
};

/// Plants a blob map by seeded region growing, samples log-normal heights per
/// category, aggregates building counts per coarse block, and corrupts a
/// random subset of blocks by drawing each count uniformly in [0, block total].
SyntheticDataset generate_synthetic(SyntheticSpec spec);

}  // namespace vulnaudit
