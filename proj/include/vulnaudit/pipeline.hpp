#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vulnaudit/audit.hpp"
#include "vulnaudit/graph_build.hpp"
#include "vulnaudit/model.hpp"
#include "vulnaudit/synth.hpp"

namespace vulnaudit {

struct ReportOptions {
    std::vector<Region> regions;  // empty = whole raster
    double min_edge = 0.05;
    double threshold_m = kDefaultChangeThreshold;
    double ad_epsilon = kDefaultAdEpsilon;
    bool heatmaps = true;
};

/// Everything one pipeline run needs. Relative paths in the JSON file are
/// resolved against the file's directory.
struct RunConfig {
    std::filesystem::path height_stack;
    std::filesystem::path prior_stack;
    std::filesystem::path output_dir;
    int tile_size = 450;
    SplitRatios split_ratios;
    double split_tolerance = 0.1;
    int upsample_factor = 1;
    TrainConfig train;
    ReportOptions report;

    void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& file);

/// Output layout under RunConfig::output_dir.
namespace layout {
inline std::filesystem::path prepared(const RunConfig& c) { return c.output_dir / "prepared"; }
inline std::filesystem::path prior(const RunConfig& c) { return prepared(c) / "prior_proportions"; }
inline std::filesystem::path splits(const RunConfig& c) { return prepared(c) / "splits.json"; }
inline std::filesystem::path prepare_report(const RunConfig& c) { return prepared(c) / "prepare_report.json"; }
inline std::filesystem::path checkpoint(const RunConfig& c) { return c.output_dir / "checkpoint"; }
inline std::filesystem::path losses(const RunConfig& c) { return c.output_dir / "losses.csv"; }
inline std::filesystem::path posteriors(const RunConfig& c) { return c.output_dir / "posteriors"; }
inline std::filesystem::path audit(const RunConfig& c) { return c.output_dir / "audit"; }
}  // namespace layout

/// Contents of splits.json.
struct PreparedSplits {
    SplitAssignment splits;
    LogNormStats norm_stats;
    std::vector<std::string> categories;
    std::vector<std::string> timesteps;
    int tile_size = 0;
};

PreparedSplits read_prepared_splits(const std::filesystem::path& file);

/// Loads the prior stack named by the config: PRIOR_COUNTS are normalized,
/// then either kind is upsampled by the configured factor.
PriorField load_prior(const RunConfig& config);

void cmd_prepare(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_infer(const RunConfig& config, const std::filesystem::path& checkpoint_dir, std::ostream& log);
void cmd_audit(const RunConfig& config, const std::filesystem::path& posteriors_dir, std::ostream& log);
void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir, std::ostream& log);

/// Runs `body`, maps InputError and bad paths to 2, NumericalError to 3, and
/// prints the message to `err`.
int run_guarded(const std::function<void()>& body, std::ostream& err);

/// Worker cap from VULNAUDIT_THREADS (default: hardware concurrency).
unsigned worker_count();

struct RecoveryScore {
    double posterior_accuracy = 0.0;
    double prior_accuracy = 0.0;
    std::size_t pixels = 0;
};

/// Argmax accuracy of the written posteriors and of the prepared prior
/// against a one-hot ground-truth stack, over test-split node pixels of every
/// timestep.
RecoveryScore score_recovery(const RunConfig& config, const std::filesystem::path& ground_truth_dir);

}  // namespace vulnaudit
