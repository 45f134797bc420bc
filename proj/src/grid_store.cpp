#include "vulnaudit/grid_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::pair<StackKind, std::string_view>, 6> kKindNames{{
    {StackKind::HeightSeries, "HEIGHT_SERIES"},
    {StackKind::PriorCounts, "PRIOR_COUNTS"},
    {StackKind::PriorProportions, "PRIOR_PROPORTIONS"},
    {StackKind::Posterior, "POSTERIOR"},
    {StackKind::AdMap, "AD_MAP"},
    {StackKind::ChangeMap, "CHANGE_MAP"},
}};

bool is_unit_range_kind(StackKind kind) {
    return kind == StackKind::PriorProportions || kind == StackKind::Posterior;
}

void validate_label(const std::string& label) {
    if (label.empty()) throw InputError("empty layer label");
    if (label == "." || label == ".." ||
        label.find_first_of("/\\:") != std::string::npos ||
        label.find('\0') != std::string::npos) {
        throw InputError("layer label '" + label + "' is not usable as a file name");
    }
}

}  // namespace

RasterGrid::RasterGrid(int w, int h, float fill, float nodata_value)
    : width(w), height_px(h),
      values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill),
      nodata(nodata_value) {}

void RasterGrid::validate() const {
    if (width <= 0 || height_px <= 0) throw InputError("raster dimensions must be positive");
    if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height_px)) {
        throw InputError("raster value count does not match width x height");
    }
    for (float v : values) {
        if (v != nodata && !std::isfinite(v)) throw InputError("non-finite raster value");
    }
}

std::string_view to_string(StackKind kind) {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "UNKNOWN";
}

StackKind stack_kind_from_string(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    throw InputError("unknown stack kind '" + std::string(name) + "'");
}

void GridStack::validate() const {
    const auto& m = manifest;
    if (m.width <= 0 || m.height_px <= 0) throw InputError("stack dimensions must be positive");
    if (grids.size() != m.layer_labels.size()) {
        throw InputError("stack has " + std::to_string(grids.size()) + " grids but " +
                         std::to_string(m.layer_labels.size()) + " labels");
    }
    std::set<std::string> seen;
    for (const auto& label : m.layer_labels) {
        validate_label(label);
        if (!seen.insert(label).second) throw InputError("duplicate layer label '" + label + "'");
    }
    for (std::size_t i = 0; i < grids.size(); ++i) {
        const auto& g = grids[i];
        if (g.width != m.width || g.height_px != m.height_px) {
            throw InputError("layer '" + m.layer_labels[i] + "' dimensions differ from manifest");
        }
        if (g.nodata != m.nodata && !(std::isnan(g.nodata) && std::isnan(m.nodata))) {
            throw InputError("layer '" + m.layer_labels[i] + "' nodata differs from manifest");
        }
        g.validate();
        if (is_unit_range_kind(m.kind)) {
            for (float v : g.values) {
                if (v != m.nodata && (v < 0.0f || v > 1.0f)) {
                    throw InputError("range violation in layer '" + m.layer_labels[i] +
                                     "': value " + std::to_string(v) + " outside [0,1]");
                }
            }
        }
    }
}

GridStack make_stack(StackKind kind, int width, int height_px,
                     std::vector<std::string> labels, float fill) {
    GridStack s;
    s.manifest.kind = kind;
    s.manifest.width = width;
    s.manifest.height_px = height_px;
    s.manifest.layer_labels = std::move(labels);
    s.grids.assign(s.manifest.layer_labels.size(), RasterGrid(width, height_px, fill));
    return s;
}

std::vector<float> read_f32_file(const fs::path& file, std::size_t expected_count) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InputError("cannot open " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != 4 * expected_count) {
        throw InputError(file.string() + ": expected " + std::to_string(4 * expected_count) +
                         " bytes, found " + std::to_string(bytes.size()));
    }
    std::vector<float> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        }
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

void write_f32_file(const fs::path& file, const std::vector<float>& values) {
    std::vector<char> bytes(4 * values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + file.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for " + file.string());
}

GridStack read_grid_stack(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw InputError("missing manifest: " + manifest_path.string());
    std::ifstream in(manifest_path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    GridStack s;
    auto& m = s.manifest;
    try {
        m.kind = stack_kind_from_string(j.at("kind").get<std::string>());
        m.width = j.at("width").get<int>();
        m.height_px = j.at("height_px").get<int>();
        m.nodata = j.at("nodata").get<float>();
        m.layer_labels = j.at("layers").get<std::vector<std::string>>();
        if (j.contains("crs_note")) m.crs_note = j.at("crs_note").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError("invalid manifest " + manifest_path.string() + ": " + e.what());
    }
    if (m.width <= 0 || m.height_px <= 0) throw InputError("stack dimensions must be positive");

    const std::size_t count = static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height_px);
    for (const auto& label : m.layer_labels) {
        validate_label(label);
        const fs::path layer = dir / (label + ".f32");
        if (!fs::exists(layer)) throw InputError("missing layer '" + label + "' in " + dir.string());
        RasterGrid g;
        g.width = m.width;
        g.height_px = m.height_px;
        g.nodata = m.nodata;
        g.values = read_f32_file(layer, count);
        s.grids.push_back(std::move(g));
    }
    s.validate();
    return s;
}

void write_grid_stack(const GridStack& stack, const fs::path& dir) {
    stack.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());

    const auto& m = stack.manifest;
    json j;
    j["kind"] = std::string(to_string(m.kind));
    j["width"] = m.width;
    j["height_px"] = m.height_px;
    j["nodata"] = m.nodata;
    j["layers"] = m.layer_labels;
    j["crs_note"] = m.crs_note;
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        if (!out) throw InputError("cannot write manifest in " + dir.string());
        out << j.dump(2) << '\n';
    }
    for (std::size_t i = 0; i < stack.grids.size(); ++i) {
        write_f32_file(dir / (m.layer_labels[i] + ".f32"), stack.grids[i].values);
    }
}

PriorField normalize_prior_counts(const GridStack& counts) {
    counts.validate();
    const auto& m = counts.manifest;
    PriorField p;
    p.width = m.width;
    p.height_px = m.height_px;
    p.categories = m.layer_labels;
    const std::size_t k_count = p.num_categories();
    const std::size_t n = p.num_pixels();
    p.proportions.assign(n * k_count, 0.0);
    p.has_prior.assign(n, 0);

    for (std::size_t px = 0; px < n; ++px) {
        double total = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            const auto& g = counts.grids[k];
            if (g.is_nodata(px)) continue;
            const double c = g.values[px];
            if (c < 0.0) {
                throw InputError("negative count " + std::to_string(c) + " in layer '" +
                                 m.layer_labels[k] + "' at pixel " + std::to_string(px));
            }
            total += c;
        }
        if (total <= 0.0) continue;
        p.has_prior[px] = 1;
        for (std::size_t k = 0; k < k_count; ++k) {
            const auto& g = counts.grids[k];
            p.proportions[px * k_count + k] = g.is_nodata(px) ? 0.0 : g.values[px] / total;
        }
    }
    return p;
}

PriorField upsample_nearest(const PriorField& coarse, int factor) {
    if (factor < 1) throw InputError("upsample factor must be >= 1");
    PriorField fine;
    fine.width = coarse.width * factor;
    fine.height_px = coarse.height_px * factor;
    fine.categories = coarse.categories;
    const std::size_t k_count = coarse.num_categories();
    fine.proportions.resize(fine.num_pixels() * k_count);
    fine.has_prior.resize(fine.num_pixels());
    for (int y = 0; y < fine.height_px; ++y) {
        for (int x = 0; x < fine.width; ++x) {
            const std::size_t dst = static_cast<std::size_t>(y) * fine.width + x;
            const std::size_t src = static_cast<std::size_t>(y / factor) * coarse.width + x / factor;
            fine.has_prior[dst] = coarse.has_prior[src];
            std::copy_n(coarse.row(src), k_count, fine.proportions.begin() + dst * k_count);
        }
    }
    return fine;
}

GridStack prior_to_stack(const PriorField& prior) {
    GridStack s = make_stack(StackKind::PriorProportions, prior.width, prior.height_px,
                             prior.categories, kNoData);
    const std::size_t k_count = prior.num_categories();
    for (std::size_t px = 0; px < prior.num_pixels(); ++px) {
        if (!prior.has_prior[px]) continue;
        for (std::size_t k = 0; k < k_count; ++k) {
            s.grids[k].values[px] = static_cast<float>(prior.proportions[px * k_count + k]);
        }
    }
    return s;
}

PriorField prior_from_stack(const GridStack& stack) {
    stack.validate();
    if (stack.manifest.kind != StackKind::PriorProportions) {
        throw InputError("expected a PRIOR_PROPORTIONS stack, got " +
                         std::string(to_string(stack.manifest.kind)));
    }
    PriorField p;
    p.width = stack.manifest.width;
    p.height_px = stack.manifest.height_px;
    p.categories = stack.manifest.layer_labels;
    const std::size_t k_count = p.num_categories();
    p.proportions.assign(p.num_pixels() * k_count, 0.0);
    p.has_prior.assign(p.num_pixels(), 0);
    for (std::size_t px = 0; px < p.num_pixels(); ++px) {
        double total = 0.0;
        bool any_nodata = false;
        for (std::size_t k = 0; k < k_count; ++k) {
            if (stack.grids[k].is_nodata(px)) any_nodata = true;
            else total += stack.grids[k].values[px];
        }
        if (any_nodata || total <= 0.0) continue;
        p.has_prior[px] = 1;
        // Renormalize in double to undo float32 storage rounding.
        for (std::size_t k = 0; k < k_count; ++k) {
            p.proportions[px * k_count + k] = stack.grids[k].values[px] / total;
        }
    }
    return p;
}

}  // namespace vulnaudit
