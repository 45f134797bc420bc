#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "vulnaudit/grid_store.hpp"
#include "vulnaudit/numcore.hpp"

namespace vulnaudit {

struct Tile {
    int origin_x = 0;
    int origin_y = 0;
    int size = 450;   // nominal edge length
    int width = 0;    // clipped extent
    int height = 0;
    std::optional<int> dominant_category;  // nullopt == NONE

    bool contains(int x, int y) const {
        return x >= origin_x && x < origin_x + width && y >= origin_y && y < origin_y + height;
    }
    friend bool operator==(const Tile&, const Tile&) = default;
};

/// Non-overlapping square tiles covering the extent, row by row; tiles on the
/// right and bottom borders are clipped.
std::vector<Tile> tile_region(int width, int height_px, int tile_size);

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Filtered pixel nodes with binary 8-neighbour adjacency.
///
/// node_pixels is ordered row-major (by y, then x), which lets node_at()
/// binary-search it instead of keeping a raster-sized lookup table.
struct GridGraph {
    int raster_width = 0;
    int raster_height = 0;
    std::vector<Pixel> node_pixels;
    SparseMatrix adjacency;  // values are all 1.0
    DenseMatrix features;    // node_count x F; column 0 is raw height

    std::size_t node_count() const { return node_pixels.size(); }
    std::size_t edge_count() const { return adjacency.nnz() / 2; }
    /// Node index of pixel (x, y), or nullopt if the pixel is not a node.
    std::optional<std::size_t> node_at(int x, int y) const;
};

/// Nodes are pixels inside any of `tiles` with height > 0 (nodata excluded).
/// Edges join 8-neighbours that are both nodes, including across tile borders.
GridGraph build_graph(const RasterGrid& heights, const std::vector<Tile>& tiles);

/// Per-feature-column statistics of log1p(x).
struct LogNormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    friend bool operator==(const LogNormStats&, const LogNormStats&) = default;
};

/// Population mean/std of log1p over all rows of all matrices. A std below
/// 1e-12 is replaced by 1. Throws InputError on a non-positive feature.
LogNormStats fit_log_norm(const std::vector<const DenseMatrix*>& features);
DenseMatrix apply_log_norm(const DenseMatrix& features, const LogNormStats& stats);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
/// Throws InputError when A is not symmetric or has a non-zero diagonal.
SparseMatrix normalize_adjacency(const GridGraph& graph);

struct SplitRatios {
    double train = 0.70;
    double test = 0.15;
    double validation = 0.15;
};

struct SplitAssignment {
    std::vector<Tile> train;
    std::vector<Tile> test;
    std::vector<Tile> validation;
    /// False when some non-empty split's category distribution deviates from
    /// the global one by more than the requested tolerance.
    bool balanced = true;
    double max_deviation = 0.0;
};

/// Argmax of prior proportions summed over the tile's prior pixels; nullopt
/// when the tile holds no prior pixel. Ties go to the lower index.
std::optional<int> dominant_category(const Tile& tile, const PriorField& prior);

/// Stratified, seeded split by dominant category. Each stratum is shuffled
/// and apportioned by largest remainder; ties in the remainder rotate across
/// strata so global totals stay close to the ratios.
SplitAssignment split_tiles(std::vector<Tile> tiles, const PriorField& prior,
                            const SplitRatios& ratios, std::uint64_t seed, double tolerance);

/// Rounds half to even.
std::size_t round_half_even(double v);

/// Induced subgraph on `nodes` (indices into `graph`, any order); the result
/// keeps row-major node order.
GridGraph induced_subgraph(const GridGraph& graph, std::vector<std::size_t> nodes);

/// Removes round_half_even(fraction * m) of the m undirected edges, both arcs
/// of each, chosen uniformly without replacement.
void drop_edges(GridGraph& graph, double fraction, std::uint64_t seed);

struct EpochSample {
    std::vector<GridGraph> subgraphs;
    double dropped_edge_fraction = 0.20;
    std::uint64_t rng_seed = 0;
};

/// Random partition of the nodes into `n_subgraphs` near-equal parts, then
/// edge dropout inside each part. Throws InputError when n_subgraphs is zero
/// or exceeds the node count, or dropout is outside [0, 1).
EpochSample sample_epoch(const GridGraph& train_graph, std::size_t n_subgraphs,
                         double dropout, std::uint64_t seed);

/// Enough parts that each holds at most `max_nodes` nodes (at least 1).
std::size_t default_subgraph_count(std::size_t node_count, std::size_t max_nodes = 50000);

// Debug dumps: "u v" per undirected edge and a node,x,y,height CSV.
void write_edge_list(const GridGraph& graph, const std::filesystem::path& file);
void write_node_table(const GridGraph& graph, const std::filesystem::path& file);

}  // namespace vulnaudit
