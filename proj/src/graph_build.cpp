#include "vulnaudit/graph_build.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "vulnaudit/error.hpp"
#include "vulnaudit/rng.hpp"

namespace vulnaudit {

namespace {

// Row-major neighbour order, so neighbour node indices come out sorted.
constexpr std::array<std::array<int, 2>, 8> kNeighbours{{
    {-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1},
}};

bool pixel_less(const Pixel& a, const Pixel& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
}

}  // namespace

std::vector<Tile> tile_region(int width, int height_px, int tile_size) {
    if (width <= 0 || height_px <= 0) throw InputError("tile_region: zero-sized extent");
    if (tile_size < 1) throw InputError("tile_region: tile size must be >= 1");
    std::vector<Tile> tiles;
    for (int y = 0; y < height_px; y += tile_size) {
        for (int x = 0; x < width; x += tile_size) {
            Tile t;
            t.origin_x = x;
            t.origin_y = y;
            t.size = tile_size;
            t.width = std::min(tile_size, width - x);
            t.height = std::min(tile_size, height_px - y);
            tiles.push_back(t);
        }
    }
    return tiles;
}

std::optional<std::size_t> GridGraph::node_at(int x, int y) const {
    const Pixel key{x, y};
    auto it = std::lower_bound(node_pixels.begin(), node_pixels.end(), key, pixel_less);
    if (it == node_pixels.end() || !(*it == key)) return std::nullopt;
    return static_cast<std::size_t>(it - node_pixels.begin());
}

GridGraph build_graph(const RasterGrid& heights, const std::vector<Tile>& tiles) {
    const int w = heights.width;
    const int h = heights.height_px;
    std::vector<std::uint8_t> in_tiles(heights.size(), 0);
    for (const Tile& t : tiles) {
        if (t.origin_x < 0 || t.origin_y < 0 || t.origin_x + t.width > w || t.origin_y + t.height > h) {
            throw InputError("build_graph: tile outside the height raster");
        }
        for (int y = t.origin_y; y < t.origin_y + t.height; ++y) {
            for (int x = t.origin_x; x < t.origin_x + t.width; ++x) in_tiles[heights.index(x, y)] = 1;
        }
    }

    GridGraph g;
    g.raster_width = w;
    g.raster_height = h;
    std::vector<std::int64_t> node_of(heights.size(), -1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = heights.index(x, y);
            const float v = heights.values[i];
            if (in_tiles[i] && v != heights.nodata && v > 0.0f) {
                node_of[i] = static_cast<std::int64_t>(g.node_pixels.size());
                g.node_pixels.push_back({x, y});
            }
        }
    }

    const std::size_t n = g.node_pixels.size();
    g.features = DenseMatrix(n, 1);
    auto& adj = g.adjacency;
    adj.rows = adj.cols = n;
    adj.row_pointers.assign(1, 0);
    for (std::size_t u = 0; u < n; ++u) {
        const auto [x, y] = g.node_pixels[u];
        g.features(u, 0) = heights.at(x, y);
        for (const auto& [dx, dy] : kNeighbours) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::int64_t v = node_of[heights.index(nx, ny)];
            if (v < 0) continue;
            adj.col_indices.push_back(static_cast<std::uint32_t>(v));
            adj.values.push_back(1.0);
        }
        adj.row_pointers.push_back(adj.col_indices.size());
    }
    return g;
}

LogNormStats fit_log_norm(const std::vector<const DenseMatrix*>& features) {
    std::size_t cols = 0;
    for (const auto* m : features) cols = std::max(cols, m->cols());
    LogNormStats stats;
    stats.mean.assign(cols, 0.0);
    stats.stddev.assign(cols, 1.0);
    for (std::size_t c = 0; c < cols; ++c) {
        double total = 0.0;
        std::size_t count = 0;
        for (const auto* m : features) {
            for (std::size_t r = 0; r < m->rows(); ++r) {
                const double v = (*m)(r, c);
                if (!(v > 0.0)) throw InputError("log_normalize: non-positive feature " + std::to_string(v));
                total += std::log1p(v);
                ++count;
            }
        }
        if (count == 0) continue;
        const double mean = total / static_cast<double>(count);
        double sq = 0.0;
        for (const auto* m : features) {
            for (std::size_t r = 0; r < m->rows(); ++r) {
                const double d = std::log1p((*m)(r, c)) - mean;
                sq += d * d;
            }
        }
        const double sd = std::sqrt(sq / static_cast<double>(count));
        stats.mean[c] = mean;
        stats.stddev[c] = sd < 1e-12 ? 1.0 : sd;
    }
    return stats;
}

DenseMatrix apply_log_norm(const DenseMatrix& features, const LogNormStats& stats) {
    if (features.cols() != stats.mean.size()) {
        throw InputError("log_normalize: feature dimension " + std::to_string(features.cols()) +
                         " does not match recorded statistics (" + std::to_string(stats.mean.size()) + ")");
    }
    DenseMatrix out(features.rows(), features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        for (std::size_t c = 0; c < features.cols(); ++c) {
            const double v = features(r, c);
            if (!(v > 0.0)) throw InputError("log_normalize: non-positive feature " + std::to_string(v));
            out(r, c) = (std::log1p(v) - stats.mean[c]) / stats.stddev[c];
        }
    }
    return out;
}

SparseMatrix normalize_adjacency(const GridGraph& graph) {
    const SparseMatrix& a = graph.adjacency;
    a.validate();
    if (!a.is_symmetric()) throw InputError("normalize_adjacency: adjacency is not symmetric");
    const std::size_t n = a.rows;
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 1.0;
        for (std::size_t p = a.row_pointers[i]; p < a.row_pointers[i + 1]; ++p) {
            if (a.col_indices[p] == i) throw InputError("normalize_adjacency: non-zero diagonal");
            deg += a.values[p];
        }
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }

    SparseMatrix out;
    out.rows = out.cols = n;
    out.row_pointers.assign(1, 0);
    out.col_indices.reserve(a.nnz() + n);
    out.values.reserve(a.nnz() + n);
    for (std::size_t i = 0; i < n; ++i) {
        bool diag_done = false;
        auto emit_diag = [&] {
            out.col_indices.push_back(static_cast<std::uint32_t>(i));
            out.values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[i]);
            diag_done = true;
        };
        for (std::size_t p = a.row_pointers[i]; p < a.row_pointers[i + 1]; ++p) {
            const std::uint32_t j = a.col_indices[p];
            if (!diag_done && j > i) emit_diag();
            out.col_indices.push_back(j);
            out.values.push_back(a.values[p] * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        if (!diag_done) emit_diag();
        out.row_pointers.push_back(out.col_indices.size());
    }
    return out;
}

std::optional<int> dominant_category(const Tile& tile, const PriorField& prior) {
    const std::size_t k_count = prior.num_categories();
    std::vector<double> totals(k_count, 0.0);
    bool any = false;
    for (int y = tile.origin_y; y < tile.origin_y + tile.height; ++y) {
        for (int x = tile.origin_x; x < tile.origin_x + tile.width; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * prior.width + x;
            if (!prior.has_prior[px]) continue;
            any = true;
            const double* row = prior.row(px);
            for (std::size_t k = 0; k < k_count; ++k) totals[k] += row[k];
        }
    }
    if (!any) return std::nullopt;
    return static_cast<int>(std::max_element(totals.begin(), totals.end()) - totals.begin());
}

SplitAssignment split_tiles(std::vector<Tile> tiles, const PriorField& prior,
                            const SplitRatios& ratios, std::uint64_t seed, double tolerance) {
    if (tiles.empty()) throw InputError("split_tiles: empty tiling");
    const std::array<double, 3> r{ratios.train, ratios.test, ratios.validation};
    for (double v : r) {
        if (!(v > 0.0)) throw InputError("split_tiles: split ratios must be positive");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw InputError("split_tiles: split ratios must sum to 1");

    // -1 stands for NONE; std::map keeps strata in a fixed order.
    std::map<int, std::vector<Tile>> strata;
    for (Tile& t : tiles) {
        if (t.origin_x + t.width > prior.width || t.origin_y + t.height > prior.height_px) {
            throw InputError("split_tiles: tile outside the prior raster");
        }
        t.dominant_category = dominant_category(t, prior);
        strata[t.dominant_category.value_or(-1)].push_back(t);
    }

    Rng rng(seed);
    SplitAssignment out;
    std::array<std::vector<Tile>*, 3> dst{&out.train, &out.test, &out.validation};
    std::size_t stratum_index = 0;
    for (auto& [category, members] : strata) {
        rng.shuffle(members);
        const std::size_t n = members.size();
        std::array<std::size_t, 3> counts{};
        std::array<double, 3> frac{};
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double quota = static_cast<double>(n) * r[s];
            counts[s] = static_cast<std::size_t>(std::floor(quota + 1e-9));
            frac[s] = quota - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        std::array<int, 3> order{0, 1, 2};
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (std::abs(frac[a] - frac[b]) > 1e-9) return frac[a] > frac[b];
            return (a + stratum_index) % 3 < (b + stratum_index) % 3;
        });
        for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];

        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t i = 0; i < counts[s]; ++i) dst[s]->push_back(members[pos++]);
        }
        ++stratum_index;
    }

    auto tile_less = [](const Tile& a, const Tile& b) {
        return a.origin_y != b.origin_y ? a.origin_y < b.origin_y : a.origin_x < b.origin_x;
    };
    for (auto* split : dst) std::sort(split->begin(), split->end(), tile_less);

    std::map<int, double> global;
    for (const auto& [category, members] : strata) {
        global[category] = static_cast<double>(members.size()) / static_cast<double>(tiles.size());
    }
    for (const auto* split : dst) {
        if (split->empty()) continue;
        std::map<int, double> local;
        for (const Tile& t : *split) local[t.dominant_category.value_or(-1)] += 1.0;
        for (const auto& [category, share] : global) {
            const double dev = std::abs(local[category] / static_cast<double>(split->size()) - share);
            out.max_deviation = std::max(out.max_deviation, dev);
        }
    }
    out.balanced = out.max_deviation <= tolerance;
    return out;
}

std::size_t round_half_even(double v) {
    return static_cast<std::size_t>(std::nearbyint(v));
}

GridGraph induced_subgraph(const GridGraph& graph, std::vector<std::size_t> nodes) {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    GridGraph sub;
    sub.raster_width = graph.raster_width;
    sub.raster_height = graph.raster_height;
    const std::size_t n = nodes.size();
    const std::size_t f = graph.features.cols();
    sub.features = DenseMatrix(n, f);
    sub.node_pixels.reserve(n);
    auto& adj = sub.adjacency;
    adj.rows = adj.cols = n;
    adj.row_pointers.assign(1, 0);
    const auto& src = graph.adjacency;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t old = nodes[i];
        sub.node_pixels.push_back(graph.node_pixels[old]);
        std::copy_n(graph.features.row(old).begin(), f, sub.features.row(i).begin());
        for (std::size_t p = src.row_pointers[old]; p < src.row_pointers[old + 1]; ++p) {
            auto it = std::lower_bound(nodes.begin(), nodes.end(), src.col_indices[p]);
            if (it == nodes.end() || *it != src.col_indices[p]) continue;
            adj.col_indices.push_back(static_cast<std::uint32_t>(it - nodes.begin()));
            adj.values.push_back(src.values[p]);
        }
        adj.row_pointers.push_back(adj.col_indices.size());
    }
    return sub;
}

void drop_edges(GridGraph& graph, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw InputError("edge dropout must lie in [0, 1)");
    auto& adj = graph.adjacency;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (std::size_t u = 0; u < adj.rows; ++u) {
        for (std::size_t p = adj.row_pointers[u]; p < adj.row_pointers[u + 1]; ++p) {
            if (adj.col_indices[p] > u) edges.emplace_back(static_cast<std::uint32_t>(u), adj.col_indices[p]);
        }
    }
    const std::size_t m = edges.size();
    const std::size_t drop = std::min(m, round_half_even(fraction * static_cast<double>(m)));
    if (drop == 0) return;

    Rng rng(seed);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < drop; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<std::uint8_t> keep(adj.nnz(), 1);
    auto arc_position = [&adj](std::uint32_t u, std::uint32_t v) {
        auto first = adj.col_indices.begin() + static_cast<std::ptrdiff_t>(adj.row_pointers[u]);
        auto last = adj.col_indices.begin() + static_cast<std::ptrdiff_t>(adj.row_pointers[u + 1]);
        return static_cast<std::size_t>(std::lower_bound(first, last, v) - adj.col_indices.begin());
    };
    for (std::size_t i = 0; i < drop; ++i) {
        const auto [u, v] = edges[idx[i]];
        keep[arc_position(u, v)] = 0;
        keep[arc_position(v, u)] = 0;
    }

    SparseMatrix kept;
    kept.rows = adj.rows;
    kept.cols = adj.cols;
    kept.row_pointers.assign(1, 0);
    for (std::size_t u = 0; u < adj.rows; ++u) {
        for (std::size_t p = adj.row_pointers[u]; p < adj.row_pointers[u + 1]; ++p) {
            if (!keep[p]) continue;
            kept.col_indices.push_back(adj.col_indices[p]);
            kept.values.push_back(adj.values[p]);
        }
        kept.row_pointers.push_back(kept.col_indices.size());
    }
    adj = std::move(kept);
}

EpochSample sample_epoch(const GridGraph& train_graph, std::size_t n_subgraphs,
                         double dropout, std::uint64_t seed) {
    const std::size_t n = train_graph.node_count();
    if (n_subgraphs == 0) throw InputError("sample_epoch: n_subgraphs must be positive");
    if (n_subgraphs > n) {
        throw InputError("sample_epoch: n_subgraphs (" + std::to_string(n_subgraphs) +
                         ") exceeds node count (" + std::to_string(n) + ")");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("sample_epoch: dropout must lie in [0, 1)");

    EpochSample sample;
    sample.dropped_edge_fraction = dropout;
    sample.rng_seed = seed;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    if (n_subgraphs > 1) rng.shuffle(perm);

    const std::size_t base = n / n_subgraphs;
    const std::size_t extra = n % n_subgraphs;
    std::size_t pos = 0;
    for (std::size_t part = 0; part < n_subgraphs; ++part) {
        const std::size_t len = base + (part < extra ? 1 : 0);
        std::vector<std::size_t> members(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                         perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        GridGraph sub = induced_subgraph(train_graph, std::move(members));
        drop_edges(sub, dropout, derive_seed(seed, part + 1));
        sample.subgraphs.push_back(std::move(sub));
    }
    return sample;
}

std::size_t default_subgraph_count(std::size_t node_count, std::size_t max_nodes) {
    if (max_nodes == 0) max_nodes = 1;
    return std::max<std::size_t>(1, (node_count + max_nodes - 1) / max_nodes);
}

void write_edge_list(const GridGraph& graph, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw InputError("cannot write " + file.string());
    const auto& adj = graph.adjacency;
    for (std::size_t u = 0; u < adj.rows; ++u) {
        for (std::size_t p = adj.row_pointers[u]; p < adj.row_pointers[u + 1]; ++p) {
            if (adj.col_indices[p] > u) out << u << ' ' << adj.col_indices[p] << '\n';
        }
    }
}

void write_node_table(const GridGraph& graph, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw InputError("cannot write " + file.string());
    out << "node,x,y,height\n";
    out.precision(9);
    for (std::size_t i = 0; i < graph.node_count(); ++i) {
        out << i << ',' << graph.node_pixels[i].x << ',' << graph.node_pixels[i].y << ','
            << graph.features(i, 0) << '\n';
    }
}

}  // namespace vulnaudit
