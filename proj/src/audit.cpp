#include "vulnaudit/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace {

std::vector<double> smoothed_log(std::span<const double> v, double epsilon) {
    std::vector<double> out(v.begin(), v.end());
    double total = 0.0;
    for (double& x : out) {
        if (!(x > 0.0)) x = epsilon;
        total += x;
    }
    for (double& x : out) x = std::log(x / total);
    return out;
}

std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

double aitchison_distance(std::span<const double> p, std::span<const double> q, double epsilon) {
    if (p.size() != q.size()) throw InputError("aitchison_distance: compositions differ in length");
    if (p.size() < 2) throw InputError("aitchison_distance: need at least 2 components");
    if (!(epsilon > 0.0)) throw InputError("aitchison_distance: epsilon must be positive");
    const auto lp = smoothed_log(p, epsilon);
    const auto lq = smoothed_log(q, epsilon);
    const auto k = static_cast<double>(p.size());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        const double d = lp[i] - lq[i];
        sum += d;
        sum_sq += d * d;
    }
    return std::sqrt(std::max(0.0, sum_sq - sum * sum / k));
}

AitchisonMap ad_map(const PriorField& prior, const PosteriorField& posterior, double epsilon) {
    if (prior.width != posterior.width || prior.height_px != posterior.height_px) {
        throw InputError("ad_map: prior and posterior dimensions differ");
    }
    if (prior.num_categories() != posterior.num_categories()) {
        throw InputError("ad_map: prior and posterior category counts differ");
    }
    AitchisonMap out{RasterGrid(prior.width, prior.height_px, kNoData), epsilon};
    const std::size_t k = prior.num_categories();
    for (std::size_t px = 0; px < prior.num_pixels(); ++px) {
        if (!prior.has_prior[px] || !posterior.valid[px]) continue;
        out.grid.values[px] = static_cast<float>(
            aitchison_distance({prior.row(px), k}, {posterior.row(px), k}, epsilon));
    }
    return out;
}

int classify_change(double delta, double threshold_m) {
    if (delta > threshold_m) return 1;
    if (delta < -threshold_m) return -1;
    return 0;
}

ChangeMap change_map(const RasterGrid& before, const RasterGrid& after, double threshold_m) {
    if (before.width != after.width || before.height_px != after.height_px) {
        throw InputError("change_map: raster dimensions differ");
    }
    if (!(threshold_m > 0.0)) throw InputError("change_map: threshold must be positive");
    ChangeMap out{RasterGrid(before.width, before.height_px, 0.0f, kChangeNoData), threshold_m};
    for (std::size_t i = 0; i < before.size(); ++i) {
        const bool a_missing = before.is_nodata(i);
        const bool b_missing = after.is_nodata(i);
        if (a_missing && b_missing) {
            out.grid.values[i] = out.grid.nodata;
            continue;
        }
        const double h0 = a_missing ? 0.0 : before.values[i];
        const double h1 = b_missing ? 0.0 : after.values[i];
        out.grid.values[i] = static_cast<float>(classify_change(h1 - h0, threshold_m));
    }
    return out;
}

RegionalTrend regional_trend(const std::vector<PosteriorField>& posteriors, const Region& region) {
    RegionalTrend trend;
    trend.region = region;
    if (posteriors.empty()) return trend;
    const auto& first = posteriors.front();
    if (region.x < 0 || region.y < 0 || region.width < 1 || region.height < 1 ||
        region.x + region.width > first.width || region.y + region.height > first.height_px) {
        throw InputError("regional_trend: region out of raster bounds");
    }
    trend.categories = first.categories;
    const std::size_t k = first.num_categories();
    for (const auto& post : posteriors) {
        if (post.width != first.width || post.height_px != first.height_px || post.num_categories() != k) {
            throw InputError("regional_trend: posterior fields differ in shape");
        }
        std::vector<double> mean(k, 0.0);
        std::size_t count = 0;
        for (int y = region.y; y < region.y + region.height; ++y) {
            for (int x = region.x; x < region.x + region.width; ++x) {
                const std::size_t px = static_cast<std::size_t>(y) * post.width + x;
                if (!post.valid[px]) continue;
                for (std::size_t c = 0; c < k; ++c) mean[c] += post.row(px)[c];
                ++count;
            }
        }
        if (count > 0) {
            for (double& m : mean) m /= static_cast<double>(count);
        }
        trend.timesteps.push_back(post.timestep);
        trend.series.push_back(std::move(mean));
        trend.empty.push_back(count == 0 ? 1 : 0);
    }
    return trend;
}

TransitionMatrix transition_matrix(const std::vector<PosteriorField>& posteriors, TransitionMode mode) {
    if (posteriors.size() < 2) throw InputError("transition_matrix: need at least 2 timesteps");
    if (mode == TransitionMode::OneStep && posteriors.size() != 2) {
        throw InputError("transition_matrix: one-step mode takes exactly 2 timesteps");
    }
    const auto& first = posteriors.front();
    const std::size_t k = first.num_categories();
    for (const auto& p : posteriors) {
        if (p.width != first.width || p.height_px != first.height_px || p.num_categories() != k) {
            throw InputError("transition_matrix: posterior fields differ in shape");
        }
    }

    TransitionMatrix tm;
    tm.labels = first.categories;
    tm.labels.emplace_back(kNoneLabel);
    const std::size_t d = k + 1;
    tm.raw.assign(d * d, 0.0);
    tm.period = mode == TransitionMode::OneStep ? posteriors[0].timestep + "->" + posteriors[1].timestep : "averaged";

    std::vector<double> a(d), b(d);
    auto extended = [k](const PosteriorField& p, std::size_t px, std::vector<double>& out) {
        if (p.valid[px]) {
            std::copy_n(p.row(px), k, out.begin());
            out[k] = 0.0;
        } else {
            std::fill(out.begin(), out.end(), 0.0);
            out[k] = 1.0;
        }
    };
    const std::size_t pixels = first.num_pixels();
    for (std::size_t t = 0; t + 1 < posteriors.size(); ++t) {
        for (std::size_t px = 0; px < pixels; ++px) {
            extended(posteriors[t], px, a);
            extended(posteriors[t + 1], px, b);
            for (std::size_t i = 0; i < d; ++i) {
                if (a[i] == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) tm.raw[i * d + j] += a[i] * b[j];
            }
        }
    }
    const double denom = static_cast<double>(pixels) * static_cast<double>(posteriors.size() - 1);
    for (double& v : tm.raw) v /= denom;

    tm.normalized.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) row += tm.raw[i * d + j];
        if (row > 0.0) {
            for (std::size_t j = 0; j < d; ++j) tm.normalized[i * d + j] = tm.raw[i * d + j] / row;
        } else {
            tm.normalized[i * d + k] = 1.0;
            tm.zero_rows.push_back(tm.labels[i]);
        }
    }
    return tm;
}

std::string transition_to_dot(const TransitionMatrix& tm, double min_edge) {
    std::ostringstream out;
    out << "digraph transitions {\n";
    out << "  label=\"" << tm.period << "\";\n";
    for (const auto& l : tm.labels) out << "  \"" << l << "\";\n";
    const std::size_t d = tm.dim();
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double v = tm.at(i, j);
            if (v < min_edge) continue;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3f", v);
            out << "  \"" << tm.labels[i] << "\" -> \"" << tm.labels[j] << "\" [label=\"" << buf << "\"];\n";
        }
    }
    out << "}\n";
    return out.str();
}

std::string transition_to_csv(const TransitionMatrix& tm, bool normalized) {
    std::ostringstream out;
    out << "from\\to";
    for (const auto& l : tm.labels) out << ',' << l;
    out << '\n';
    const std::size_t d = tm.dim();
    for (std::size_t i = 0; i < d; ++i) {
        out << tm.labels[i];
        for (std::size_t j = 0; j < d; ++j) out << ',' << format_g9(normalized ? tm.at(i, j) : tm.raw_at(i, j));
        out << '\n';
    }
    return out.str();
}

std::string trend_to_csv(const RegionalTrend& trend) {
    std::ostringstream out;
    out << "timestep";
    for (const auto& c : trend.categories) out << ',' << c;
    out << '\n';
    for (std::size_t t = 0; t < trend.series.size(); ++t) {
        out << trend.timesteps[t];
        for (double v : trend.series[t]) out << ',' << format_g9(v);
        out << '\n';
    }
    return out.str();
}

void write_heatmap_ppm(const RasterGrid& grid, const std::filesystem::path& file, double lo, double hi) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + file.string());
    out << "P6\n" << grid.width << ' ' << grid.height_px << "\n255\n";
    std::vector<unsigned char> rgb(grid.size() * 3, 0);
    const double span = hi - lo;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.is_nodata(i)) continue;
        double t = span > 0.0 ? (grid.values[i] - lo) / span : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        rgb[3 * i] = static_cast<unsigned char>(std::lround(255.0 * t));
        rgb[3 * i + 2] = static_cast<unsigned char>(std::lround(255.0 * (1.0 - t)));
    }
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw InputError("write failed for " + file.string());
}

void write_heatmap_ppm(const RasterGrid& grid, const std::filesystem::path& file) {
    double lo = 0.0;
    double hi = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.is_nodata(i)) continue;
        const double v = grid.values[i];
        lo = any ? std::min(lo, v) : v;
        hi = any ? std::max(hi, v) : v;
        any = true;
    }
    write_heatmap_ppm(grid, file, lo, hi);
}

}  // namespace vulnaudit
