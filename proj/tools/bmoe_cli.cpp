// bmoe: command-line driver for data generation, two-stage training,
// evaluation, ablations, routing heatmaps and the gradient oracle.
//
// Exit codes: 0 success, 1 runtime failure, 2 validation failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bmoe/bmoe.hpp"
#include "bmoe/experiment.hpp"
#include "bmoe/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace bmoe;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig e = g.config_path.empty() ? presets::default_experiment() : load_experiment(g.config_path);
    if (g.seed) e.set_seed(*g.seed);
    if (!g.out_dir.empty()) e.output_dir = g.out_dir;
    snapshot_experiment(e);
    return e;
}

std::string out_path(const ExperimentConfig& e, const std::string& name) {
    return (fs::path(e.output_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

std::vector<std::string> class_names(const DatasetConfig& d) {
    std::vector<std::string> names;
    for (const auto& c : d.classes) names.push_back(c.label());
    return names;
}

void warn_zero_support(const MetricsReport& r) {
    if (r.zero_support.empty()) return;
    std::cerr << "warning: classes without samples in this split count as F1 = 0:";
    for (auto c : r.zero_support) std::cerr << ' ' << c;
    std::cerr << '\n';
}

std::string expert_file(RegionId r) { return "expert_" + std::string(region_name(r)) + ".bmo"; }

BMoEModel<float> load_model(const ExperimentData& d, const ExperimentConfig& e, const std::string& checkpoint) {
    BMoEModel<float> model(d.model, e.seed);
    apply_checkpoint(model.parameters(), load_checkpoint(checkpoint));
    return model;
}

const std::vector<VideoSample>& pick_split(const ExperimentData& d, const std::string& split) {
    if (split == "train") return d.split.train;
    if (split == "test") return d.split.test;
    return d.samples;
}

int cmd_gen_data(const Globals& g, const std::string& output) {
    const ExperimentConfig e = resolve_config(g);
    if (!e.data_config) throw ValidationError({"config.data names an existing dataset file; nothing to generate"});
    const DatasetConfig& cfg = *e.data_config;
    const auto samples = generate_dataset(cfg);
    const std::string path = output.empty() ? out_path(e, "dataset.bmds") : output;
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_dataset(samples, path, &cfg);
    const auto hist = class_histogram(samples, cfg.num_classes());
    std::cout << "class_id,class_name,region,count\n";
    for (std::size_t c = 0; c < hist.size(); ++c)
        std::cout << c << ',' << cfg.classes[c].label() << ',' << region_name(cfg.classes[c].region) << ',' << hist[c]
                  << '\n';
    std::cout << "total," << samples.size() << "\nwrote " << path << '\n';
    return 0;
}

int cmd_pretrain(const Globals& g, const std::vector<std::string>& region_names) {
    const ExperimentConfig e = resolve_config(g);
    std::vector<RegionId> regions;
    for (const auto& n : region_names) {
        auto r = parse_region(n);
        if (!r) throw ValidationError({"--regions: \"" + n + "\" is not a region"});
        regions.push_back(*r);
    }
    if (regions.empty()) regions.assign(std::begin(kAllRegions), std::end(kAllRegions));
    const ExperimentData d = prepare_data(e);
    BMoEModel<float> model(d.model, e.seed);
    const fs::path dir = fs::path(e.output_dir) / "pretrain";
    fs::create_directories(dir);
    if (d.model.routing == RoutingMode::Single) {
        auto res = pretrain_single(model, d.split.train, d.table, e.pipeline.pretrain);
        ParamList<float> params = model.semantic_parameters();
        for (const auto& p : model.single_parameters()) params.push_back(p);
        save_checkpoint((dir / "single.bmo").string(), params);
        write_text((dir / "single.jsonl").string(), epoch_log_jsonl(res.log));
        std::cout << "single: final loss " << res.log.back().loss << " top1 " << res.log.back().top1 << '\n';
        return 0;
    }
    for (RegionId r : kAllRegions) {
        if (std::find(regions.begin(), regions.end(), r) == regions.end() || !model.expert_present(r)) continue;
        auto res = pretrain_expert(model, r, d.split.train, d.table, e.pipeline.pretrain);
        ParamList<float> params = model.semantic_parameters();
        for (const auto& p : model.expert_parameters(r)) params.push_back(p);
        save_checkpoint((dir / expert_file(r)).string(), params);
        write_text((dir / ("expert_" + std::string(region_name(r)) + ".jsonl")).string(), epoch_log_jsonl(res.log));
        std::cout << region_name(r) << ": final loss " << res.log.back().loss << " top1 " << res.log.back().top1
                  << '\n';
    }
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

/// Expert checkpoints are applied in region order; the semantic encoder is
/// shared and pretrained sequentially, so the last file carries its final
/// state. The result matches the in-process pipeline bit for bit.
void load_pretrained(BMoEModel<float>& model, const std::string& dir) {
    auto require = [&](const std::string& name) {
        const std::string path = (fs::path(dir) / name).string();
        if (!fs::exists(path)) throw IoError("pretrained checkpoint " + path + " does not exist");
        return load_checkpoint(path);
    };
    if (model.config().routing == RoutingMode::Single) {
        const auto entries = require("single.bmo");
        apply_checkpoint(model.semantic_parameters(), entries);
        apply_checkpoint(model.single_parameters(), entries);
        return;
    }
    for (RegionId r : kAllRegions) {
        if (!model.expert_present(r)) continue;
        const auto entries = require(expert_file(r));
        apply_checkpoint(model.semantic_parameters(), entries);
        apply_checkpoint(model.expert_parameters(r), entries);
    }
}

int cmd_train(const Globals& g, const std::string& from_pretrained) {
    const ExperimentConfig e = resolve_config(g);
    const ExperimentData d = prepare_data(e);
    BMoEModel<float> model(d.model, e.seed);
    if (!from_pretrained.empty()) load_pretrained(model, from_pretrained);
    const auto log = train_end_to_end(model, d.split.train, e.pipeline.train);
    save_checkpoint(out_path(e, "model.bmo"), model.parameters());
    write_text(out_path(e, "train_log.jsonl"), epoch_log_jsonl(log));
    const auto report = evaluate(model, d.split.test);
    warn_zero_support(report);
    write_text(out_path(e, "metrics.json"), report.to_json().dump(2) + "\n");
    std::cout << std::setprecision(6) << "top1 " << report.top1 << " f1_macro " << report.f1_macro << '\n';
    return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& split) {
    const ExperimentConfig e = resolve_config(g);
    const ExperimentData d = prepare_data(e);
    const auto model = load_model(d, e, checkpoint);
    const auto report = evaluate(model, pick_split(d, split));
    warn_zero_support(report);
    write_text(out_path(e, "eval_" + split + ".json"), report.to_json().dump(2) + "\n");
    write_text(out_path(e, "confusion_" + split + ".csv"), report.confusion_csv());
    const auto table = per_class_table(report, {}, class_names(d.config));
    write_text(out_path(e, "per_class_" + split + ".csv"), per_class_csv(table));
    std::cout << report.to_json().dump(2) << '\n';
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& checkpoint, const std::string& mode_name) {
    const ExperimentConfig e = resolve_config(g);
    const ExperimentData d = prepare_data(e);
    const AblationMode mode = mode_name == "retraining" ? AblationMode::Retraining : AblationMode::Masking;
    if (mode == AblationMode::Masking && checkpoint.empty())
        throw ValidationError({"ablate --mode masking needs --checkpoint"});
    BMoEModel<float> model(d.model, e.seed);
    if (!checkpoint.empty()) model = load_model(d, e, checkpoint);
    auto run = [&](const std::vector<AblationMask>& masks, const std::string& file) {
        const auto rows =
            run_ablation(model, d.split.test, masks, mode, &d.split.train, &d.table, &e.pipeline, e.seed);
        const std::string csv = ablation_csv(rows);
        write_text(out_path(e, file), csv);
        std::cout << csv;
    };
    run(stream_ablation_masks(), "ablation_streams.csv");
    run(expert_ablation_masks(), "ablation_experts.csv");
    return 0;
}

int cmd_heatmap(const Globals& g, const std::string& checkpoint, const std::string& split) {
    const ExperimentConfig e = resolve_config(g);
    const ExperimentData d = prepare_data(e);
    const auto model = load_model(d, e, checkpoint);
    const auto hm = expert_importance_heatmap(model, pick_split(d, split));
    const std::string csv = hm.to_csv(class_names(d.config));
    write_text(out_path(e, "heatmap.csv"), csv);
    std::cout << csv;
    return 0;
}

int cmd_gradcheck(const Globals& g, const GradCheckDims& dims) {
    std::string dir = g.out_dir;
    if (!g.config_path.empty() || !g.out_dir.empty()) dir = resolve_config(g).output_dir;
    const auto res = run_gradcheck_suite(dims);
    std::ostringstream os;
    os << "block,coordinates,max_relative_error,status\n";
    for (const auto& b : res.blocks)
        os << b.name << ',' << b.coordinates << ',' << std::setprecision(3) << std::scientific << b.max_relative_error
           << std::defaultfloat << ',' << (b.passed(res.tolerance) ? "PASS" : "FAIL") << '\n';
    std::cout << "toy model parameters: " << res.model_parameters << "\n" << os.str();
    if (!dir.empty()) write_text((fs::path(dir) / "gradcheck.csv").string(), os.str());
    std::cout << (res.passed() ? "all blocks within " : "some blocks exceed ") << res.tolerance << '\n';
    return res.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Body-part mixture-of-experts on synthetic clips"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config_path, "Experiment JSON (defaults to the built-in separable experiment)")
        ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Overrides the config seed (model init and training)");
    app.add_option("--out", g.out_dir, "Overrides config.output_dir");

    std::string output, checkpoint, split = "test", from_pretrained, mode = "masking";
    std::vector<std::string> regions;
    GradCheckDims dims;

    auto* gen = app.add_subcommand("gen-data", "Generate a dataset file and its JSON sidecar");
    gen->add_option("--output", output, "Dataset path (default <out>/dataset.bmds)");

    auto* pre = app.add_subcommand("pretrain", "Stage one: pretrain each region expert");
    pre->add_option("--regions", regions, "Subset of head, body, upper_limb, lower_limb")->delimiter(',');

    auto* train = app.add_subcommand("train", "Stage two: end-to-end training");
    train->add_option("--from-pretrained", from_pretrained, "Directory written by pretrain");

    auto* eval = app.add_subcommand("eval", "Metrics report for a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    eval->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

    auto* ablate = app.add_subcommand("ablate", "Stream and expert ablation tables");
    ablate->add_option("--checkpoint", checkpoint, "Model checkpoint (masking mode)");
    ablate->add_option("--mode", mode, "masking or retraining")->check(CLI::IsMember({"masking", "retraining"}));

    auto* heat = app.add_subcommand("heatmap", "Class x expert mean fusion weights");
    heat->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    heat->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every block on a toy model");
    grad->add_option("--frames", dims.frames);
    grad->add_option("--height", dims.height);
    grad->add_option("--width", dims.width);
    grad->add_option("--model-dim", dims.model_dim);
    grad->add_option("--motion-dim", dims.motion_dim);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitValidation;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*gen) return cmd_gen_data(g, output);
        if (*pre) return cmd_pretrain(g, regions);
        if (*train) return cmd_train(g, from_pretrained);
        if (*eval) return cmd_eval(g, checkpoint, split);
        if (*ablate) return cmd_ablate(g, checkpoint, mode);
        if (*heat) return cmd_heatmap(g, checkpoint, split);
        if (*grad) return cmd_gradcheck(g, dims);
    } catch (const ValidationError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}
