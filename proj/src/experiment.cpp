#include "claf/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace claf {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'L', 'A', 'F', 'C', 'K', 'P', 'T'};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing: " + std::strerror(errno));
    os << text;
    if (!os) throw std::runtime_error("write to " + path + " failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string file_hash(const std::string& path) { return hex64(fnv1a64(read_text_file(path))); }

SplitManifest prepare_manifest(const RunConfig& cfg, const ImageDataset& train) {
    if (train.num_classes() != cfg.data.num_classes)
        throw ConfigError("dataset has " + std::to_string(train.num_classes()) + " classes, config asks for " +
                          std::to_string(cfg.data.num_classes));
    return build_splits(train, cfg.split_spec());
}

SplitManifest read_manifest(const std::string& path) {
    return manifest_from_json(nlohmann::json::parse(read_text_file(path)));
}

std::string method_label(const RunConfig& cfg) {
    const auto& t = cfg.trainer;
    if (t.weights.u == 0.0 && t.weights.align == 0.0 && t.weights.c == 0.0) return "supervised";
    if (t.weights.c == 0.0) return t.fa.start_fraction >= 1.0 ? "daso-style" : "daso-style+fa";
    return t.fa.start_fraction >= 1.0 ? "claf-no-fa" : "claf";
}

void save_checkpoint(const std::string& path, Trainer& trainer, const std::string& loader_state, const RunConfig& cfg,
                     const std::vector<EvalRecord>& evals) {
    ensure_parent(path);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing: " + std::strerror(errno));
        os.write(kCheckpointMagic, sizeof kCheckpointMagic);
        const std::string hash = cfg.hash();
        os.write(hash.data(), static_cast<std::streamsize>(hash.size()));
        trainer.save_state(os);
        const auto len = static_cast<std::uint64_t>(loader_state.size());
        os.write(reinterpret_cast<const char*>(&len), sizeof len);
        os.write(loader_state.data(), static_cast<std::streamsize>(loader_state.size()));
        if (!os) throw std::runtime_error("write to " + tmp + " failed");
    }
    std::filesystem::rename(tmp, path);

    nlohmann::ordered_json side;
    side["format"] = "claf-checkpoint";
    side["version"] = 1;
    side["iter"] = trainer.iter();
    side["config_hash"] = cfg.hash();
    side["archive_hash"] = file_hash(path);
    side["config"] = cfg.to_json();
    side["evals"] = nlohmann::ordered_json::array();
    for (const auto& e : evals) side["evals"].push_back(e.to_json());
    write_text_file(path + ".json", side.dump(2) + "\n");
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    const nlohmann::json side = nlohmann::json::parse(read_text_file(path + ".json"));
    CheckpointInfo info;
    info.config = side.at("config");
    info.config_hash = side.at("config_hash").get<std::string>();
    info.archive_hash = side.at("archive_hash").get<std::string>();
    info.iter = side.at("iter").get<std::size_t>();
    for (const auto& e : side.at("evals")) info.evals.push_back(EvalRecord::from_json(e));
    return info;
}

RunConfig checkpoint_config(const std::string& path) {
    const CheckpointInfo info = read_checkpoint_info(path);
    RunConfig cfg = RunConfig::from_json(info.config);
    if (cfg.hash() != info.config_hash)
        throw ConfigError(path + ": stored config does not match its recorded hash");
    return cfg;
}

std::string load_checkpoint(const std::string& path, Trainer& trainer, const RunConfig& cfg) {
    const CheckpointInfo info = read_checkpoint_info(path);
    if (file_hash(path) != info.archive_hash) throw std::runtime_error(path + ": archive hash does not match sidecar");
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
    char magic[sizeof kCheckpointMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error(path + ": not a checkpoint");
    std::string hash(16, '\0');
    if (!is.read(hash.data(), 16)) throw std::runtime_error(path + ": truncated");
    if (hash != cfg.hash() || hash != info.config_hash)
        throw ConfigError(path + ": checkpoint config hash " + hash + " does not match current config " + cfg.hash());
    trainer.load_state(is);
    std::uint64_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof len)) throw std::runtime_error(path + ": truncated");
    std::string loader_state(len, '\0');
    if (!is.read(loader_state.data(), static_cast<std::streamsize>(len))) throw std::runtime_error(path + ": truncated");
    return loader_state;
}

nlohmann::ordered_json TrainSummary::to_json(const RunConfig& cfg) const {
    nlohmann::ordered_json j;
    j["name"] = cfg.name;
    j["method"] = method_label(cfg);
    j["seed"] = cfg.seed;
    j["config_hash"] = cfg.hash();
    j["iters"] = iters;
    j["evals"] = evals.size();
    j["final_score"] = final_score ? nlohmann::ordered_json(*final_score) : nlohmann::ordered_json(nullptr);
    j["last"] = evals.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(evals.back().to_json());
    j["seconds"] = seconds;
    j["checkpoint"] = checkpoint;
    return j;
}

TrainSummary run_training(const RunConfig& cfg, const TrainOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    auto log = [&](const std::string& msg) {
        if (opts.log) opts.log(msg);
    };
    std::filesystem::create_directories(opts.out_dir);
    write_text_file(opts.out_dir + "/config.json", cfg.to_json().dump(2) + "\n");

    Datasets data = load_datasets(cfg);
    const SplitManifest manifest = opts.manifest ? read_manifest(*opts.manifest) : prepare_manifest(cfg, *data.train);
    if (manifest.spec.num_classes != cfg.data.num_classes) throw ConfigError("manifest class count differs from config");
    write_text_file(opts.out_dir + "/manifest.json", manifest_dump(manifest));

    Trainer trainer(cfg.model, cfg.trainer, manifest.labeled_counts);
    TrainLoader loader(*data.train, manifest, cfg.trainer.batch_labeled, cfg.trainer.batch_unlabeled, cfg.augment,
                       cfg.seed);

    TrainSummary summary;
    summary.checkpoint = opts.out_dir + "/checkpoint.bin";
    const std::string metrics_path = opts.out_dir + "/metrics.jsonl";
    std::ofstream metrics;
    if (opts.resume) {
        loader.deserialize(load_checkpoint(*opts.resume, trainer, cfg));
        summary.evals = read_checkpoint_info(*opts.resume).evals;
        // Keep only log lines written before the checkpoint.
        std::vector<std::string> kept;
        if (std::ifstream in(metrics_path); in) {
            for (std::string line; std::getline(in, line);) {
                const auto j = nlohmann::json::parse(line, nullptr, false);
                if (!j.is_discarded() && j.value("iter", std::size_t{0}) < trainer.iter() + (j.value("kind", "") == "eval"))
                    kept.push_back(line);
            }
        }
        metrics.open(metrics_path, std::ios::trunc);
        for (const auto& l : kept) metrics << l << '\n';
        log("resumed from " + *opts.resume + " at iteration " + std::to_string(trainer.iter()));
    } else {
        metrics.open(metrics_path, std::ios::trunc);
    }
    if (!metrics) throw std::runtime_error("cannot open " + metrics_path);
    loader.set_prefetch(!cfg.trainer.deterministic);

    const std::size_t total = cfg.trainer.total_iters;
    const std::size_t stop = opts.stop_at ? std::min(opts.stop_at, total) : total;
    while (trainer.iter() < stop) {
        const TrainBatch batch = loader.next();
        const StepMetrics m = trainer.step(batch);
        nlohmann::ordered_json line = {{"kind", "step"}};
        line.update(m.to_json());
        metrics << line.dump() << '\n';

        const std::size_t done = trainer.iter();
        if (done % cfg.trainer.eval_interval == 0 || done == total) {
            EvalRecord r = evaluate(trainer.model(), *data.test, done, cfg.eval.tail_k, cfg.eval.batch_size);
            summary.evals.push_back(r);
            nlohmann::ordered_json ej = {{"kind", "eval"}};
            ej.update(r.to_json());
            metrics << ej.dump() << '\n';
            metrics.flush();
            loader.set_prefetch(false);
            save_checkpoint(summary.checkpoint, trainer, loader.serialize(), cfg, summary.evals);
            loader.set_prefetch(!cfg.trainer.deterministic);
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter %zu  loss %.4f  l_cls %.4f  top1 %.4f  tail%zu %.4f", done, m.total,
                          m.l_cls, r.top1, r.tail_k, r.tail);
            log(buf);
        }
    }
    loader.set_prefetch(false);
    if (trainer.iter() % cfg.trainer.eval_interval != 0 && trainer.iter() != total)
        save_checkpoint(summary.checkpoint, trainer, loader.serialize(), cfg, summary.evals);

    summary.iters = trainer.iter();
    if (summary.evals.size() >= cfg.eval.window) summary.final_score = final_score(summary.evals, cfg.eval.window);
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text_file(opts.out_dir + "/summary.json", summary.to_json(cfg).dump(2) + "\n");
    return summary;
}

}  // namespace claf
