#include "vulnaudit/checkpoint.hpp"

#include <fstream>

#include "vulnaudit/error.hpp"

namespace vulnaudit {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return json{
        {"tau", c.tau},
        {"learning_rate", c.learning_rate},
        {"epochs", c.epochs},
        {"edge_dropout", c.edge_dropout},
        {"n_subgraphs", c.n_subgraphs},
        {"seed", c.seed},
        {"loss_weights", {c.loss_weights.rec, c.loss_weights.kl, c.loss_weights.ce}},
        {"adam_betas", {c.adam_beta1, c.adam_beta2}},
        {"adam_eps", c.adam_eps},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.tau = j.value("tau", c.tau);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.edge_dropout = j.value("edge_dropout", c.edge_dropout);
        c.n_subgraphs = j.value("n_subgraphs", c.n_subgraphs);
        c.seed = j.value("seed", c.seed);
        if (j.contains("loss_weights")) {
            const auto w = j.at("loss_weights").get<std::vector<double>>();
            if (w.size() != 3) throw InputError("loss_weights must have 3 entries (rec, kl, ce)");
            c.loss_weights = {w[0], w[1], w[2]};
        }
        if (j.contains("adam_betas")) {
            const auto b = j.at("adam_betas").get<std::vector<double>>();
            if (b.size() != 2) throw InputError("adam_betas must have 2 entries");
            c.adam_beta1 = b[0];
            c.adam_beta2 = b[1];
        }
        c.adam_eps = j.value("adam_eps", c.adam_eps);
    } catch (const json::exception& e) {
        throw InputError(std::string("invalid training configuration: ") + e.what());
    }
    c.validate();
    return c;
}

void round_to_f32(ModelParams& params) {
    for (auto& t : params.tensors) {
        for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    }
}

void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
    const auto& p = ck.params;
    if (!p.all_finite()) throw NumericalError("refusing to save a checkpoint with non-finite parameters");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());

    json tensors = json::array();
    for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
        const auto& t = p.tensors[s];
        const std::string name(ModelParams::kTensorNames[s]);
        tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
        std::vector<float> blob(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) blob[i] = static_cast<float>(t.data()[i]);
        write_f32_file(dir / (name + ".f32"), blob);
    }
    json j{
        {"format", "vulnaudit-checkpoint/1"},
        {"features", p.features},
        {"categories", p.categories},
        {"hidden", {p.hidden, p.hidden}},
        {"category_labels", ck.categories},
        {"norm_stats", {{"mean", ck.norm_stats.mean}, {"std", ck.norm_stats.stddev}}},
        {"config", train_config_to_json(ck.config)},
        {"tensors", tensors},
    };
    std::ofstream out(dir / "checkpoint.json", std::ios::trunc);
    if (!out) throw InputError("cannot write " + (dir / "checkpoint.json").string());
    out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path manifest = dir / "checkpoint.json";
    std::ifstream in(manifest);
    if (!in) throw InputError("missing checkpoint manifest: " + manifest.string());
    Checkpoint ck;
    try {
        const json j = json::parse(in);
        const auto hidden = j.at("hidden").get<std::vector<std::size_t>>();
        if (hidden.size() != 2 || hidden[0] != hidden[1]) throw InputError("unsupported hidden layer sizes");
        ck.params = ModelParams::zeros(j.at("features").get<std::size_t>(), j.at("categories").get<std::size_t>(),
                                       hidden[0]);
        ck.categories = j.at("category_labels").get<std::vector<std::string>>();
        ck.norm_stats.mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
        ck.norm_stats.stddev = j.at("norm_stats").at("std").get<std::vector<double>>();
        ck.config = train_config_from_json(j.at("config"));
        const auto& tensors = j.at("tensors");
        if (tensors.size() != ModelParams::kTensorCount) throw InputError("checkpoint tensor count mismatch");
        for (std::size_t s = 0; s < ModelParams::kTensorCount; ++s) {
            const auto& t = tensors[s];
            const std::string name = t.at("name").get<std::string>();
            if (name != ModelParams::kTensorNames[s]) throw InputError("checkpoint tensor order mismatch at " + name);
            const auto [rows, cols] = ck.params.shape(s);
            if (t.at("rows").get<std::size_t>() != rows || t.at("cols").get<std::size_t>() != cols) {
                throw InputError("checkpoint tensor " + name + " has the wrong shape");
            }
            const auto blob = read_f32_file(dir / (name + ".f32"), rows * cols);
            auto& dst = ck.params.tensors[s].data();
            for (std::size_t i = 0; i < blob.size(); ++i) dst[i] = blob[i];
        }
    } catch (const json::exception& e) {
        throw InputError("invalid checkpoint " + manifest.string() + ": " + e.what());
    }
    if (ck.categories.size() != ck.params.categories) throw InputError("checkpoint category labels mismatch");
    if (ck.norm_stats.mean.size() != ck.params.features || ck.norm_stats.stddev.size() != ck.params.features) {
        throw InputError("checkpoint normalization statistics do not match the feature count");
    }
    return ck;
}

}  // namespace vulnaudit
