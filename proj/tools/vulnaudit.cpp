#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include <json.hpp>

#include "vulnaudit/error.hpp"
#include "vulnaudit/pipeline.hpp"

using namespace vulnaudit;

int main(int argc, char** argv) {
    CLI::App app{"Graph-based audit of building-use priors from height time series"};
    app.require_subcommand(1);

    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Run configuration (JSON)")->required();
    };

    auto* prepare = app.add_subcommand("prepare", "Tile, split and normalize the inputs");
    add_config(prepare);

    auto* train = app.add_subcommand("train", "Train the model on the prepared splits");
    add_config(train);
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    train->add_option("--epochs", epochs, "Override train.epochs");
    train->add_option("--seed", seed, "Override train.seed");
    train->add_option("--lr", lr, "Override train.learning_rate");

    auto* infer = app.add_subcommand("infer", "Write per-timestep posterior stacks");
    add_config(infer);
    std::string checkpoint_dir;
    infer->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory (default: <output_dir>/checkpoint)");

    auto* audit = app.add_subcommand("audit", "Distance, change, trend and transition reports");
    add_config(audit);
    std::string posteriors_dir;
    std::optional<double> min_edge;
    std::optional<double> threshold;
    audit->add_option("--posteriors", posteriors_dir, "Posterior directory (default: <output_dir>/posteriors)");
    audit->add_option("--min-edge", min_edge, "Hide transition edges below this probability");
    audit->add_option("--threshold-m", threshold, "Height change threshold in metres");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string spec_path;
    std::string out_dir;
    synth->add_option("--spec", spec_path, "Synthetic spec (JSON); defaults when omitted");
    synth->add_option("--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    return run_guarded(
        [&] {
            if (synth->parsed()) {
                SyntheticSpec spec;
                if (!spec_path.empty()) {
                    std::ifstream in(spec_path);
                    if (!in) throw InputError("cannot open " + spec_path);
                    spec = synthetic_spec_from_json(nlohmann::json::parse(in));
                }
                cmd_synth(spec, out_dir, std::cout);
                return;
            }
            RunConfig config = load_run_config(config_path);
            if (epochs) config.train.epochs = *epochs;
            if (seed) config.train.seed = *seed;
            if (lr) config.train.learning_rate = *lr;
            if (min_edge) config.report.min_edge = *min_edge;
            if (threshold) config.report.threshold_m = *threshold;
            config.validate();

            if (prepare->parsed()) {
                cmd_prepare(config, std::cout);
            } else if (train->parsed()) {
                cmd_train(config, std::cout);
            } else if (infer->parsed()) {
                cmd_infer(config, checkpoint_dir.empty() ? layout::checkpoint(config) : std::filesystem::path(checkpoint_dir), std::cout);
            } else if (audit->parsed()) {
                cmd_audit(config, posteriors_dir.empty() ? layout::posteriors(config) : std::filesystem::path(posteriors_dir), std::cout);
            }
        },
        std::cerr);
}
