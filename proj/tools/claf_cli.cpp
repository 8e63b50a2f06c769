#include "claf/experiment.hpp"
#include "claf/kernels.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

struct ConfigArgs {
    std::string preset;
    std::string file;
    std::vector<std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "Named preset (see --list-presets)");
        app->add_option("--config", file, "JSON config file");
        app->add_option("--set", overrides, "Dotted-key override, e.g. --set trainer.total_iters=100")->take_all();
    }

    claf::RunConfig load(const std::vector<std::string>& extra = {}) const {
        std::vector<std::string> all = overrides;
        all.insert(all.end(), extra.begin(), extra.end());
        return claf::load_run_config(preset.empty() ? std::nullopt : std::optional(preset),
                                     file.empty() ? std::nullopt : std::optional(file), all);
    }
};

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << '\n'; }

int cmd_prepare(const ConfigArgs& args, const std::string& out) {
    const claf::RunConfig cfg = args.load();
    const claf::Datasets data = claf::load_datasets(cfg);
    const claf::SplitManifest manifest = claf::prepare_manifest(cfg, *data.train);
    const std::string path = out.empty() ? "runs/" + cfg.name + "/manifest.json" : out;
    claf::write_text_file(path, claf::manifest_dump(manifest));
    claf::write_text_file(path + ".config.json", cfg.to_json().dump(2) + "\n");
    nlohmann::ordered_json j;
    j["manifest"] = path;
    j["labeled_counts"] = manifest.labeled_counts;
    j["unlabeled_counts"] = manifest.unlabeled_counts;
    j["config_hash"] = cfg.hash();
    print_json(j);
    return 0;
}

int cmd_train(const ConfigArgs& args, const std::vector<std::string>& ablate, claf::TrainOptions opts,
              bool print_config, bool quiet) {
    std::vector<std::string> extra;
    for (const auto& a : ablate) {
        if (a == "no-fa") extra.push_back("fa.start_fraction=1.0");
        else if (a == "no-contrastive") extra.push_back("loss.lambda_c=0");
        else throw claf::ConfigError("unknown ablation '" + a + "' (expected no-fa or no-contrastive)");
    }
    const claf::RunConfig cfg = args.load(extra);
    if (print_config) {
        print_json(cfg.to_json());
        return 0;
    }
    if (opts.out_dir.empty()) opts.out_dir = "runs/" + cfg.name + "-" + claf::method_label(cfg) + "-s" + std::to_string(cfg.seed);
    if (!quiet) opts.log = [](const std::string& msg) { std::cerr << msg << '\n'; };
    const claf::TrainSummary summary = claf::run_training(cfg, opts);
    print_json(summary.to_json(cfg));
    return 0;
}

int cmd_eval(const std::string& checkpoint, const ConfigArgs& args) {
    const claf::RunConfig ckpt_cfg = claf::checkpoint_config(checkpoint);
    claf::Trainer trainer(ckpt_cfg.model, ckpt_cfg.trainer, ckpt_cfg.split_spec().labeled_counts());
    claf::load_checkpoint(checkpoint, trainer, ckpt_cfg);
    const bool custom = !args.preset.empty() || !args.file.empty() || !args.overrides.empty();
    const claf::RunConfig data_cfg = custom ? args.load() : ckpt_cfg;
    if (data_cfg.data.num_classes != ckpt_cfg.data.num_classes)
        throw claf::ConfigError("checkpoint has K=" + std::to_string(ckpt_cfg.data.num_classes) + " but the test set has K=" +
                                std::to_string(data_cfg.data.num_classes));
    const claf::Datasets data = claf::load_datasets(data_cfg);
    const claf::EvalRecord r =
        claf::evaluate(trainer.model(), *data.test, trainer.iter(), ckpt_cfg.eval.tail_k, ckpt_cfg.eval.batch_size);
    print_json(r.to_json());
    return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& split, const std::string& out) {
    const claf::RunConfig cfg = claf::checkpoint_config(checkpoint);
    claf::Trainer trainer(cfg.model, cfg.trainer, cfg.split_spec().labeled_counts());
    claf::load_checkpoint(checkpoint, trainer, cfg);
    const claf::Datasets data = claf::load_datasets(cfg);
    const claf::ImageDataset& ds = split == "train" ? *data.train : *data.test;
    nlohmann::json header;
    header["checkpoint"] = checkpoint;
    header["checkpoint_hash"] = claf::file_hash(checkpoint);
    header["config_hash"] = cfg.hash();
    header["iter"] = trainer.iter();
    header["split"] = split;
    claf::export_features(trainer.model(), ds, out, header, cfg.eval.batch_size);
    nlohmann::ordered_json j;
    j["path"] = out;
    j["rows"] = ds.size();
    j["dim"] = trainer.model().feature_dim();
    j["checkpoint_hash"] = header["checkpoint_hash"];
    print_json(j);
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<claf::SummaryRow> rows;
    for (const auto& in : inputs) {
        const std::string path = std::filesystem::is_directory(in) ? in + "/summary.json" : in;
        const nlohmann::json s = nlohmann::json::parse(claf::read_text_file(path));
        const std::string setting = s.at("name").get<std::string>(), method = s.at("method").get<std::string>();
        double score;
        if (!s.at("final_score").is_null()) score = s["final_score"].get<double>();
        else if (!s.at("last").is_null()) score = s["last"].at("top1").get<double>();
        else throw std::runtime_error(path + ": run has no evaluations");
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const claf::SummaryRow& r) { return r.setting == setting && r.method == method; });
        if (it == rows.end()) rows.push_back({setting, method, {score}});
        else it->scores.push_back(score);
    }
    const std::string csv = claf::summary_csv(rows);
    if (!out.empty()) claf::write_text_file(out, csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLAF: contrastive learning with class-dependent feature augmentation for imbalanced SSL"};
    app.require_subcommand(1);
    bool list_presets = false;
    app.add_flag("--list-presets", list_presets, "Print the preset names and exit");

    ConfigArgs prep_args, train_args, eval_args;
    std::string prep_out;
    auto* prep = app.add_subcommand("prepare-data", "Build and write the long-tailed split manifest");
    prep_args.attach(prep);
    prep->add_option("--out", prep_out, "Manifest path (default runs/<name>/manifest.json)");

    claf::TrainOptions train_opts;
    train_opts.out_dir.clear();
    std::vector<std::string> ablate;
    std::string manifest, resume;
    bool print_config = false, quiet = false;
    auto* train = app.add_subcommand("train", "Train a model and write metrics, checkpoints and a summary");
    train_args.attach(train);
    train->add_option("--out-dir", train_opts.out_dir, "Run directory");
    train->add_option("--manifest", manifest, "Use an existing split manifest");
    train->add_option("--resume", resume, "Resume from a checkpoint written by the same config");
    train->add_option("--ablate", ablate, "no-fa and/or no-contrastive");
    train->add_option("--stop-at", train_opts.stop_at, "Stop after this iteration (for staged runs)");
    train->add_flag("--print-config", print_config, "Print the effective config and exit");
    train->add_flag("--quiet", quiet, "No progress lines on stderr");

    std::string eval_ckpt;
    auto* eval = app.add_subcommand("eval", "Evaluate the EMA network of a checkpoint");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    eval_args.attach(eval);

    std::string export_ckpt, export_split = "test", export_out;
    auto* exp = app.add_subcommand("export-features", "Write encoder features and labels for offline projection");
    exp->add_option("--checkpoint", export_ckpt, "Checkpoint path")->required();
    exp->add_option("--split", export_split, "train or test")->check(CLI::IsMember({"train", "test"}));
    exp->add_option("--out", export_out, "Output file")->required();

    std::vector<std::string> report_inputs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Aggregate run summaries into a mean/std CSV");
    report->add_option("runs", report_inputs, "Run directories or summary.json files")->required();
    report->add_option("--out", report_out, "CSV output path");

    if (argc > 1 && std::string(argv[1]) == "--list-presets") {
        for (const auto& p : claf::preset_names()) std::cout << p << '\n';
        return 0;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*prep) return cmd_prepare(prep_args, prep_out);
        if (*train) {
            if (!manifest.empty()) train_opts.manifest = manifest;
            if (!resume.empty()) train_opts.resume = resume;
            return cmd_train(train_args, ablate, train_opts, print_config, quiet);
        }
        if (*eval) return cmd_eval(eval_ckpt, eval_args);
        if (*exp) return cmd_export(export_ckpt, export_split, export_out);
        if (*report) return cmd_report(report_inputs, report_out);
    } catch (const claf::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
