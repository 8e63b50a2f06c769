#include "claf/run_config.hpp"

#include "claf/rng.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace claf {

namespace {

using ojson = nlohmann::ordered_json;

bool compatible(const nlohmann::json& base, const nlohmann::json& v) {
    if (base.is_number()) return v.is_number();
    if (base.is_boolean()) return v.is_boolean();
    if (base.is_string()) return v.is_string();
    if (base.is_array()) return v.is_array();
    return base.type() == v.type();
}

template <typename T>
T get(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key ") + key + ": " + e.what());
    }
}

std::size_t get_count(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(std::string("config key ") + key + " must be a non-negative integer");
    return v.get<std::size_t>();
}

ojson cifar_patch(int classes, double gamma, std::size_t n1, std::size_t m1) {
    ojson p;
    p["data"] = {{"source", classes == 10 ? "cifar10" : "cifar100"},
                 {"num_classes", classes},
                 {"head_labeled", n1},
                 {"head_unlabeled", m1},
                 {"gamma", gamma}};
    p["model"] = {{"backbone", "wrn28_2"}, {"proj_dim", 64}};
    p["trainer"] = {{"total_iters", 250000}, {"batch_labeled", 64}, {"batch_unlabeled", 128}, {"eval_interval", 500}};
    return p;
}

}  // namespace

ojson RunConfig::to_json() const {
    ojson j;
    j["name"] = name;
    j["seed"] = seed;
    j["data"] = {{"source", data.source},
                 {"root", data.root},
                 {"num_classes", data.num_classes},
                 {"head_labeled", data.head_labeled},
                 {"head_unlabeled", data.head_unlabeled},
                 {"gamma", data.gamma},
                 {"synthetic",
                  {{"per_class", data.synthetic.per_class},
                   {"test_per_class", data.synthetic.test_per_class},
                   {"image_size", data.synthetic.image_size},
                   {"noise", data.synthetic.noise},
                   {"seed", data.synthetic.seed}}}};
    j["augment"] = augment.to_json();
    j["model"] = {{"backbone", model.backbone},
                  {"cnn_width", model.cnn_width},
                  {"wrn_depth", model.wrn_depth},
                  {"wrn_widen", model.wrn_widen},
                  {"proj_dim", model.proj_dim},
                  {"proj_hidden", model.proj_hidden},
                  {"proj_linear", model.proj_linear},
                  {"leaky_slope", model.leaky_slope},
                  {"bn_momentum", model.bn_momentum},
                  {"ema_momentum", model.ema_momentum}};
    j["fa"] = {{"alpha", trainer.fa.alpha}, {"mu", trainer.fa.mu}, {"start_fraction", trainer.fa.start_fraction}};
    j["loss"] = {{"lambda_u", trainer.weights.u}, {"lambda_align", trainer.weights.align}, {"lambda_c", trainer.weights.c}};
    j["pseudo_label"] = {{"tau", trainer.tau}, {"t_proto", trainer.t_proto}, {"blend_window", trainer.blend_window}};
    j["contrastive"] = {{"temperature", trainer.temperature}};
    j["memory"] = {{"capacity", trainer.queue_capacity}};
    j["optim"] = {{"lr", trainer.optim.lr},
                  {"momentum", trainer.optim.momentum},
                  {"nesterov", trainer.optim.nesterov},
                  {"weight_decay", trainer.optim.weight_decay},
                  {"cosine", trainer.optim.cosine}};
    j["trainer"] = {{"total_iters", trainer.total_iters},
                    {"batch_labeled", trainer.batch_labeled},
                    {"batch_unlabeled", trainer.batch_unlabeled},
                    {"eval_interval", trainer.eval_interval},
                    {"deterministic", trainer.deterministic}};
    j["eval"] = {{"window", eval.window}, {"tail_k", eval.tail_k}, {"batch_size", eval.batch_size}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& patch) {
    ojson doc = RunConfig{}.to_json();
    merge_strict(doc, patch);

    RunConfig c;
    c.name = get<std::string>(doc, "name");
    c.seed = get<std::uint64_t>(doc, "seed");

    const auto& d = doc["data"];
    c.data.source = get<std::string>(d, "source");
    c.data.root = get<std::string>(d, "root");
    c.data.num_classes = get_count(d, "num_classes");
    c.data.head_labeled = get_count(d, "head_labeled");
    c.data.head_unlabeled = get_count(d, "head_unlabeled");
    c.data.gamma = get<double>(d, "gamma");
    const auto& s = d["synthetic"];
    c.data.synthetic.per_class = get_count(s, "per_class");
    c.data.synthetic.test_per_class = get_count(s, "test_per_class");
    c.data.synthetic.image_size = get_count(s, "image_size");
    c.data.synthetic.noise = get<double>(s, "noise");
    c.data.synthetic.seed = get<std::uint64_t>(s, "seed");

    ojson aug = doc["augment"];
    if (aug["ops"] != c.augment.to_json()["ops"]) throw ConfigError("augment.ops is fixed and cannot be changed");
    c.augment = AugmentPolicy::from_json(aug);

    const auto& m = doc["model"];
    c.model.backbone = get<std::string>(m, "backbone");
    c.model.cnn_width = get_count(m, "cnn_width");
    c.model.wrn_depth = get_count(m, "wrn_depth");
    c.model.wrn_widen = get_count(m, "wrn_widen");
    c.model.proj_dim = get_count(m, "proj_dim");
    c.model.proj_hidden = get_count(m, "proj_hidden");
    c.model.proj_linear = get<bool>(m, "proj_linear");
    c.model.leaky_slope = get<float>(m, "leaky_slope");
    c.model.bn_momentum = get<float>(m, "bn_momentum");
    c.model.ema_momentum = get<double>(m, "ema_momentum");
    c.model.num_classes = c.data.num_classes;
    c.model.in_channels = 3;
    c.model.image_size = c.data.source == "synthetic" ? c.data.synthetic.image_size : 32;

    auto& t = c.trainer;
    t.fa.alpha = get<double>(doc["fa"], "alpha");
    t.fa.mu = get<double>(doc["fa"], "mu");
    t.fa.start_fraction = get<double>(doc["fa"], "start_fraction");
    t.weights.u = get<double>(doc["loss"], "lambda_u");
    t.weights.align = get<double>(doc["loss"], "lambda_align");
    t.weights.c = get<double>(doc["loss"], "lambda_c");
    t.tau = get<double>(doc["pseudo_label"], "tau");
    t.t_proto = get<double>(doc["pseudo_label"], "t_proto");
    t.blend_window = get<double>(doc["pseudo_label"], "blend_window");
    t.temperature = get<double>(doc["contrastive"], "temperature");
    t.queue_capacity = get_count(doc["memory"], "capacity");
    const auto& o = doc["optim"];
    t.optim.lr = get<double>(o, "lr");
    t.optim.momentum = get<double>(o, "momentum");
    t.optim.nesterov = get<bool>(o, "nesterov");
    t.optim.weight_decay = get<double>(o, "weight_decay");
    t.optim.cosine = get<bool>(o, "cosine");
    const auto& tr = doc["trainer"];
    t.total_iters = get_count(tr, "total_iters");
    t.batch_labeled = get_count(tr, "batch_labeled");
    t.batch_unlabeled = get_count(tr, "batch_unlabeled");
    t.eval_interval = get_count(tr, "eval_interval");
    t.deterministic = get<bool>(tr, "deterministic");
    t.seed = c.seed;

    c.eval.window = get_count(doc["eval"], "window");
    c.eval.tail_k = get_count(doc["eval"], "tail_k");
    c.eval.batch_size = get_count(doc["eval"], "batch_size");
    c.validate();
    return c;
}

void RunConfig::validate() const {
    try {
        if (data.source != "synthetic" && data.source != "cifar10" && data.source != "cifar100")
            throw ConfigError("data.source must be synthetic, cifar10 or cifar100");
        if (data.source == "cifar10" && data.num_classes != 10) throw ConfigError("cifar10 requires data.num_classes = 10");
        if (data.source == "cifar100" && data.num_classes != 100)
            throw ConfigError("cifar100 requires data.num_classes = 100");
        if (data.source == "synthetic" && (data.synthetic.image_size < 16 || data.synthetic.per_class == 0))
            throw ConfigError("data.synthetic needs image_size >= 16 and per_class > 0");
        split_spec().validate();
        model.validate();
        trainer.validate();
        if (eval.window == 0 || eval.batch_size == 0) throw ConfigError("eval.window and eval.batch_size must be positive");
        if (eval.tail_k == 0 || eval.tail_k > data.num_classes) throw ConfigError("eval.tail_k must be in [1, K]");
        if (augment.num_ops > 14 || augment.pad > 16 || augment.flip_prob < 0.0 || augment.flip_prob > 1.0 ||
            augment.cutout_fraction < 0.0 || augment.cutout_fraction > 1.0)
            throw ConfigError("augment policy out of range");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

SplitSpec RunConfig::split_spec() const {
    SplitSpec s;
    s.num_classes = data.num_classes;
    s.head_labeled = data.head_labeled;
    s.head_unlabeled = data.head_unlabeled;
    s.gamma = data.gamma;
    s.seed = seed;
    return s;
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

std::vector<std::string> preset_names() {
    return {"claf-cifar10lt-g100",       "claf-cifar10lt-g100-n1500", "claf-cifar10lt-g150",
            "claf-cifar10lt-g150-n1500", "claf-cifar100lt-g10",       "claf-cifar100lt-g10-n150",
            "claf-cifar100lt-g20",       "claf-cifar100lt-g20-n150",  "desk-synthetic4",
            "desk-cifar10lt-reduced"};
}

nlohmann::json preset_patch(const std::string& name) {
    ojson p;
    if (name == "claf-cifar10lt-g100") p = cifar_patch(10, 100, 500, 4000);
    else if (name == "claf-cifar10lt-g100-n1500") p = cifar_patch(10, 100, 1500, 3000);
    else if (name == "claf-cifar10lt-g150") p = cifar_patch(10, 150, 500, 4000);
    else if (name == "claf-cifar10lt-g150-n1500") p = cifar_patch(10, 150, 1500, 3000);
    else if (name == "claf-cifar100lt-g10") p = cifar_patch(100, 10, 50, 400);
    else if (name == "claf-cifar100lt-g10-n150") p = cifar_patch(100, 10, 150, 300);
    else if (name == "claf-cifar100lt-g20") p = cifar_patch(100, 20, 50, 400);
    else if (name == "claf-cifar100lt-g20-n150") p = cifar_patch(100, 20, 150, 300);
    else if (name == "desk-synthetic4") {
        p["data"] = {{"source", "synthetic"}, {"num_classes", 4}, {"head_labeled", 200}, {"head_unlabeled", 800}, {"gamma", 10.0}};
        p["model"] = {{"backbone", "cnn4"}, {"cnn_width", 16}};
        p["trainer"] = {{"total_iters", 5000}, {"batch_labeled", 16}, {"batch_unlabeled", 32}, {"eval_interval", 250}};
    } else if (name == "desk-cifar10lt-reduced") {
        p["data"] = {{"source", "cifar10"}, {"num_classes", 10}, {"head_labeled", 150}, {"head_unlabeled", 1200}, {"gamma", 50.0}};
        p["model"] = {{"backbone", "cnn4"}, {"cnn_width", 32}};
        p["trainer"] = {{"total_iters", 15000}, {"batch_labeled", 32}, {"batch_unlabeled", 64}, {"eval_interval", 500}};
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    p["name"] = name;
    return p;
}

void merge_strict(ojson& base, const nlohmann::json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config section " + (path.empty() ? std::string("<root>") : path) + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_strict(slot, value, full);
        } else if (!compatible(slot, value)) {
            throw ConfigError("config key '" + full + "' expects " + std::string(slot.type_name()) + ", got " +
                              value.type_name());
        } else {
            slot = value;
        }
    }
}

void apply_override(ojson& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    nlohmann::json patch = value;
    std::size_t end = key.size();
    while (true) {
        const auto dot = key.rfind('.', end - 1);
        const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        patch = nlohmann::json{{part, patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_strict(doc, patch);
}

RunConfig load_run_config(const std::optional<std::string>& preset, const std::optional<std::string>& file,
                          const std::vector<std::string>& overrides) {
    ojson doc = RunConfig{}.to_json();
    if (preset) merge_strict(doc, preset_patch(*preset));
    if (file) {
        std::ifstream is(*file);
        if (!is) throw std::runtime_error("cannot open config file " + *file);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(*file + ": " + e.what());
        }
        merge_strict(doc, j);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return RunConfig::from_json(doc);
}

std::string data_root(const DataConfig& cfg) {
    if (!cfg.root.empty()) return cfg.root;
    if (const char* env = std::getenv("CLAF_DATA_DIR"); env && *env) return env;
    return "data";
}

Datasets load_datasets(const RunConfig& cfg) {
    Datasets out;
    if (cfg.data.source == "synthetic") {
        SyntheticSpec spec;
        spec.num_classes = cfg.data.num_classes;
        spec.image_size = cfg.data.synthetic.image_size;
        spec.noise = cfg.data.synthetic.noise;
        spec.per_class = cfg.data.synthetic.per_class;
        spec.seed = cfg.data.synthetic.seed;
        out.train = make_synthetic_dataset(spec, "synthetic-train");
        spec.per_class = cfg.data.synthetic.test_per_class;
        spec.seed = derive_seed(cfg.data.synthetic.seed, "test");
        out.test = make_synthetic_dataset(spec, "synthetic-test");
    } else {
        const int classes = cfg.data.source == "cifar10" ? 10 : 100;
        const std::string root = data_root(cfg.data);
        out.train = load_cifar(root, classes, true);
        out.test = load_cifar(root, classes, false);
    }
    return out;
}

}  // namespace claf
