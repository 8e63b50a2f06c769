#include "claf/run_config.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace claf;

TEST_SUITE("run_config") {
    TEST_CASE("defaults round-trip through JSON") {
        const RunConfig a;
        const RunConfig b = RunConfig::from_json(nlohmann::json::parse(a.to_json().dump()));
        CHECK(a.to_json().dump() == b.to_json().dump());
        CHECK(a.hash() == b.hash());
        CHECK(a.hash().size() == 16);
    }

    TEST_CASE("unknown keys and mistyped values are rejected") {
        nlohmann::ordered_json doc = RunConfig{}.to_json();
        CHECK_THROWS_AS(merge_strict(doc, nlohmann::json{{"trainer", {{"total_itres", 5}}}}), ConfigError);
        CHECK_THROWS_AS(merge_strict(doc, nlohmann::json{{"bogus", 1}}), ConfigError);
        CHECK_THROWS_AS(merge_strict(doc, nlohmann::json{{"trainer", {{"total_iters", "many"}}}}), ConfigError);
        CHECK_THROWS_AS(merge_strict(doc, nlohmann::json{{"trainer", 3}}), ConfigError);
        nlohmann::json extra = RunConfig{}.to_json();
        extra["model"]["dropout"] = 0.1;
        CHECK_THROWS_AS(RunConfig::from_json(extra), ConfigError);
    }

    TEST_CASE("overrides") {
        nlohmann::ordered_json doc = RunConfig{}.to_json();
        apply_override(doc, "loss.lambda_c=0");
        apply_override(doc, "fa.start_fraction=1.0");
        apply_override(doc, "name=my-run");
        apply_override(doc, "trainer.deterministic=false");
        const RunConfig c = RunConfig::from_json(doc);
        CHECK(c.trainer.weights.c == 0.0);
        CHECK(c.trainer.fa.start_fraction == 1.0);
        CHECK(c.name == "my-run");
        CHECK_FALSE(c.trainer.deterministic);
        CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), ConfigError);
        CHECK_THROWS_AS(apply_override(doc, "trainer..total_iters=3"), ConfigError);
        CHECK_THROWS_AS(apply_override(doc, "trainer.nope=3"), ConfigError);
    }

    TEST_CASE("every preset loads and validates") {
        for (const auto& name : preset_names()) {
            CAPTURE(name);
            const RunConfig c = load_run_config(name, std::nullopt, {});
            CHECK(c.name == name);
            CHECK(c.model.num_classes == c.data.num_classes);
        }
        CHECK(preset_names().size() == 10);
        CHECK_THROWS_AS(load_run_config(std::string("nope"), std::nullopt, {}), ConfigError);
    }

    TEST_CASE("paper setting presets") {
        const RunConfig g100 = load_run_config(std::string("claf-cifar10lt-g100"), std::nullopt, {});
        CHECK(g100.data.head_labeled == 500);
        CHECK(g100.data.head_unlabeled == 4000);
        CHECK(g100.data.gamma == 100.0);
        CHECK(g100.trainer.tau == 0.95);
        CHECK(g100.trainer.temperature == 0.07);
        CHECK(g100.trainer.weights.c == 1.0);
        CHECK(g100.trainer.fa.start_fraction == 0.8);
        CHECK(g100.trainer.eval_interval == 500);
        CHECK(g100.eval.window == 20);
        CHECK(g100.eval.tail_k == 3);
        const RunConfig c100 = load_run_config(std::string("claf-cifar100lt-g20-n150"), std::nullopt, {});
        CHECK(c100.data.num_classes == 100);
        CHECK(c100.data.head_labeled == 150);
        CHECK(c100.data.gamma == 20.0);
        const RunConfig desk = load_run_config(std::string("desk-synthetic4"), std::nullopt, {});
        CHECK(desk.data.num_classes == 4);
        CHECK(desk.data.gamma == 10.0);
        CHECK(desk.trainer.total_iters == 5000);
        CHECK(desk.model.backbone == "cnn4");
    }

    TEST_CASE("invariant violations surface as configuration errors") {
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"data.gamma=0.5"}), ConfigError);
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"trainer.total_iters=0"}), ConfigError);
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"fa.mu=0.3"}), ConfigError);
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"loss.lambda_u=-1"}), ConfigError);
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"data.source=imagenet"}), ConfigError);
        CHECK_THROWS_AS(load_run_config(std::nullopt, std::nullopt, {"eval.tail_k=9"}), ConfigError);
    }

    TEST_CASE("config files layer between preset and overrides") {
        const auto path = std::filesystem::temp_directory_path() / ("claf_cfg_" + std::to_string(::getpid()) + ".json");
        std::ofstream(path) << R"({"trainer": {"total_iters": 321}, "seed": 9})";
        const RunConfig c = load_run_config(std::string("desk-synthetic4"), path.string(), {"seed=11"});
        CHECK(c.trainer.total_iters == 321);
        CHECK(c.seed == 11);
        CHECK(c.trainer.seed == 11);
        CHECK(c.split_spec().seed == 11);
        std::ofstream(path) << "{not json";
        CHECK_THROWS_AS(load_run_config(std::nullopt, path.string(), {}), ConfigError);
        std::filesystem::remove(path);
    }

    TEST_CASE("hash tracks every field") {
        const RunConfig a = load_run_config(std::string("desk-synthetic4"), std::nullopt, {});
        const RunConfig b = load_run_config(std::string("desk-synthetic4"), std::nullopt, {});
        const RunConfig c = load_run_config(std::string("desk-synthetic4"), std::nullopt, {"contrastive.temperature=0.1"});
        CHECK(a.hash() == b.hash());
        CHECK(a.hash() != c.hash());
    }

    TEST_CASE("data root resolution") {
        DataConfig d;
        d.root = "/explicit";
        CHECK(data_root(d) == "/explicit");
        d.root.clear();
        ::setenv("CLAF_DATA_DIR", "/from-env", 1);
        CHECK(data_root(d) == "/from-env");
        ::unsetenv("CLAF_DATA_DIR");
        CHECK(data_root(d) == "data");
    }

    TEST_CASE("synthetic datasets: train and test are distinct draws with the configured shape") {
        RunConfig c;
        c.data.synthetic.per_class = 8;
        c.data.synthetic.test_per_class = 3;
        c.data.synthetic.image_size = 16;
        c.data.head_labeled = 4;
        c.data.head_unlabeled = 4;
        c.model.image_size = 16;
        const Datasets d = load_datasets(c);
        CHECK(d.train->size() == 32);
        CHECK(d.test->size() == 12);
        CHECK(d.test->height() == 16);
        std::vector<float> a(d.train->image_size()), b(d.test->image_size());
        d.train->image(0, a);
        d.test->image(0, b);
        CHECK(a != b);
    }
}
