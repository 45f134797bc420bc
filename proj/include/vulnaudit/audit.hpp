#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vulnaudit/grid_store.hpp"
#include "vulnaudit/model.hpp"

namespace vulnaudit {

inline constexpr double kDefaultAdEpsilon = 1e-6;
inline constexpr double kDefaultChangeThreshold = 1.5;
inline constexpr const char* kNoneLabel = "NONE";
/// Change codes include -1, so change maps use a distinct nodata sentinel.
inline constexpr float kChangeNoData = -9999.0f;

/// Aitchison distance between two compositions. Components <= 0 are replaced
/// by `epsilon` and both vectors are renormalized first. Evaluated as the
/// Euclidean distance between centred log-ratio transforms, which equals the
/// pairwise log-ratio form. Throws InputError for K < 2 or mismatched lengths.
double aitchison_distance(std::span<const double> p, std::span<const double> q,
                          double epsilon = kDefaultAdEpsilon);

struct AitchisonMap {
    RasterGrid grid;
    double epsilon = kDefaultAdEpsilon;
};

/// Distance where both a prior and a posterior exist; nodata elsewhere.
AitchisonMap ad_map(const PriorField& prior, const PosteriorField& posterior,
                    double epsilon = kDefaultAdEpsilon);

struct ChangeMap {
    RasterGrid grid;  // codes -1, 0, +1, or nodata where both inputs are nodata
    double threshold_m = kDefaultChangeThreshold;
};

/// +1 when delta > threshold, -1 when delta < -threshold, else 0.
int classify_change(double delta, double threshold_m);

/// Per-pixel height change, nodata heights counting as 0.
ChangeMap change_map(const RasterGrid& before, const RasterGrid& after,
                     double threshold_m = kDefaultChangeThreshold);

struct Region {
    int x = 0;
    int y = 0;
    int width = 1;
    int height = 1;
};

struct RegionalTrend {
    Region region;
    std::vector<std::string> categories;
    std::vector<std::string> timesteps;
    std::vector<std::vector<double>> series;  // per timestep, length K
    std::vector<std::uint8_t> empty;          // timestep had no node pixel in the region
};

RegionalTrend regional_trend(const std::vector<PosteriorField>& posteriors, const Region& region);

enum class TransitionMode { OneStep, Averaged };

/// (K+1) x (K+1) soft transition matrix; the last label is NONE.
struct TransitionMatrix {
    std::vector<std::string> labels;
    std::vector<double> raw;         // row-major
    std::vector<double> normalized;  // row-stochastic
    std::string period;              // "t->t1" or "averaged"
    std::vector<std::string> zero_rows;  // labels whose raw row had no mass

    std::size_t dim() const { return labels.size(); }
    double raw_at(std::size_t i, std::size_t j) const { return raw[i * dim() + j]; }
    double at(std::size_t i, std::size_t j) const { return normalized[i * dim() + j]; }
};

/// Expected co-occurrence of categories between consecutive timesteps over
/// all pixels, divided by (pixel count) x (number of pairs), then row
/// normalized. Node pixels contribute (p, NONE = 0); other pixels are one-hot
/// NONE. Rows with no raw mass become one-hot NONE. OneStep requires exactly
/// two fields.
TransitionMatrix transition_matrix(const std::vector<PosteriorField>& posteriors, TransitionMode mode);

/// Directed graph in DOT syntax, one edge per normalized entry >= min_edge.
std::string transition_to_dot(const TransitionMatrix& tm, double min_edge);

/// Header "from\to,<labels>", one row per source label, 9 significant digits.
std::string transition_to_csv(const TransitionMatrix& tm, bool normalized = true);
/// Header "timestep,<categories>".
std::string trend_to_csv(const RegionalTrend& trend);

/// Binary P6 pixmap. Values map linearly blue -> red over [lo, hi]; nodata is
/// black. With lo == hi every valid pixel is pure blue.
void write_heatmap_ppm(const RasterGrid& grid, const std::filesystem::path& file, double lo, double hi);
/// Same ramp over the grid's own valid [min, max].
void write_heatmap_ppm(const RasterGrid& grid, const std::filesystem::path& file);

}  // namespace vulnaudit
