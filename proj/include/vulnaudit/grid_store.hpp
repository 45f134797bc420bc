#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vulnaudit {

inline constexpr float kNoData = -1.0f;

/// One 2-D field on a pixel lattice, row-major with the top row first.
struct RasterGrid {
    int width = 0;
    int height_px = 0;
    std::vector<float> values;
    float nodata = kNoData;

    RasterGrid() = default;
    RasterGrid(int w, int h, float fill = 0.0f, float nodata_value = kNoData);

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(x);
    }
    float at(int x, int y) const { return values[index(x, y)]; }
    float& at(int x, int y) { return values[index(x, y)]; }
    bool is_nodata(std::size_t i) const { return values[i] == nodata; }
    std::size_t size() const { return values.size(); }

    /// Throws InputError when the length or finiteness invariant fails.
    void validate() const;

    friend bool operator==(const RasterGrid&, const RasterGrid&) = default;
};

enum class StackKind {
    HeightSeries,
    PriorCounts,
    PriorProportions,
    Posterior,
    AdMap,
    ChangeMap,
};

std::string_view to_string(StackKind kind);
StackKind stack_kind_from_string(std::string_view name);

struct StackManifest {
    StackKind kind = StackKind::HeightSeries;
    int width = 0;
    int height_px = 0;
    std::vector<std::string> layer_labels;
    float nodata = kNoData;
    std::string crs_note;

    friend bool operator==(const StackManifest&, const StackManifest&) = default;
};

struct GridStack {
    StackManifest manifest;
    std::vector<RasterGrid> grids;

    /// Checks every stack invariant: shared dimensions, one grid per label,
    /// unique non-empty labels usable as file names, finite values, and the
    /// [0,1] range for proportion/posterior stacks.
    void validate() const;

    friend bool operator==(const GridStack&, const GridStack&) = default;
};

/// Creates a stack of `labels.size()` grids filled with `fill`.
GridStack make_stack(StackKind kind, int width, int height_px,
                     std::vector<std::string> labels, float fill = 0.0f);

GridStack read_grid_stack(const std::filesystem::path& dir);
void write_grid_stack(const GridStack& stack, const std::filesystem::path& dir);

// Raw little-endian float32 blobs, shared by the stack layers and checkpoints.
std::vector<float> read_f32_file(const std::filesystem::path& file, std::size_t expected_count);
void write_f32_file(const std::filesystem::path& file, const std::vector<float>& values);

/// Per-pixel category proportions with a presence mask.
struct PriorField {
    int width = 0;
    int height_px = 0;
    std::vector<std::string> categories;
    std::vector<double> proportions;     // pixel-major: [pixel * K + k]
    std::vector<std::uint8_t> has_prior;  // one flag per pixel

    std::size_t num_categories() const { return categories.size(); }
    std::size_t num_pixels() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height_px);
    }
    const double* row(std::size_t pixel) const { return proportions.data() + pixel * num_categories(); }

    friend bool operator==(const PriorField&, const PriorField&) = default;
};

/// Counts -> proportions. Pixels whose counts sum to zero (or are all
/// nodata) carry no prior. Nodata layers at an otherwise valid pixel count 0.
PriorField normalize_prior_counts(const GridStack& counts);

/// Block replication: fine(x, y) = coarse(x / factor, y / factor).
PriorField upsample_nearest(const PriorField& coarse, int factor);

/// PRIOR_PROPORTIONS stack <-> PriorField. Pixels without prior are nodata.
GridStack prior_to_stack(const PriorField& prior);
PriorField prior_from_stack(const GridStack& stack);

}  // namespace vulnaudit
