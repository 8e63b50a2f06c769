#include "claf/data_loader.hpp"
#include "claf/evaluation.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace claf;

namespace {

std::vector<EvalRecord> records_from(const std::vector<double>& top1) {
    std::vector<EvalRecord> r;
    for (std::size_t i = 0; i < top1.size(); ++i) {
        EvalRecord e;
        e.iter = (i + 1) * 500;
        e.top1 = top1[i];
        r.push_back(e);
    }
    return r;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("claf_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_SUITE("evaluation") {
    TEST_CASE("scoring: oracle, constant predictor, balanced identity") {
        std::vector<int> labels;
        for (int c = 0; c < 5; ++c)
            for (int i = 0; i < 20; ++i) labels.push_back(c);
        const EvalRecord oracle = score_predictions(labels, labels, 5);
        CHECK(oracle.top1 == 1.0);
        for (double a : oracle.per_class) CHECK(a == 1.0);
        CHECK(oracle.tail == 1.0);

        const EvalRecord constant = score_predictions(std::vector<int>(labels.size(), 2), labels, 5);
        CHECK(constant.top1 == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(constant.tail == doctest::Approx(1.0 / 3).epsilon(1e-12));

        Rng rng(1);
        std::vector<int> preds(labels.size());
        for (auto& p : preds) p = static_cast<int>(uniform_index(rng, 5));
        const EvalRecord r = score_predictions(preds, labels, 5);
        double mean = 0;
        for (double a : r.per_class) mean += a / 5;
        CHECK(std::abs(mean - r.top1) <= 1e-9);
        CHECK(std::abs(r.tail - (r.per_class[2] + r.per_class[3] + r.per_class[4]) / 3) <= 1e-12);
        CHECK_THROWS(score_predictions({}, {}, 5));
        CHECK_THROWS(score_predictions({0}, {7}, 5));
    }

    TEST_CASE("record JSON round trip") {
        EvalRecord r;
        r.iter = 1500;
        r.top1 = 0.625;
        r.per_class = {0.5, 0.75};
        r.tail = 0.75;
        r.tail_k = 1;
        const EvalRecord back = EvalRecord::from_json(nlohmann::json::parse(r.to_json().dump()));
        CHECK(back.iter == r.iter);
        CHECK(back.top1 == r.top1);
        CHECK(back.per_class == r.per_class);
        CHECK(back.tail_k == 1);
    }

    TEST_CASE("final score: median of the last window") {
        CHECK(final_score(records_from(std::vector<double>(20, 0.7))) == doctest::Approx(0.7));
        std::vector<double> ramp;
        for (int i = 0; i < 20; ++i) ramp.push_back(0.6 + 0.01 * i);
        CHECK(final_score(records_from(ramp)) == doctest::Approx(0.695).epsilon(1e-12));
        // Earlier evaluations outside the window are ignored.
        std::vector<double> longer(5, 0.0);
        longer.insert(longer.end(), ramp.begin(), ramp.end());
        CHECK(final_score(records_from(longer)) == doctest::Approx(0.695).epsilon(1e-12));
        CHECK_THROWS_AS(final_score(records_from(std::vector<double>(19, 0.7))), std::invalid_argument);
        CHECK(final_score(records_from({0.1, 0.9, 0.5}), 3) == 0.5);
    }

    TEST_CASE("final score is permutation-invariant within the window") {
        Rng rng(4);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> v(20);
            for (auto& x : v) x = uniform01(rng);
            const double a = final_score(records_from(v));
            std::shuffle(v.begin(), v.end(), rng);
            CHECK(final_score(records_from(v)) == a);
            CHECK(a == oracle::median(v));
        }
    }

    TEST_CASE("mean and sample standard deviation, CSV summary") {
        const MeanStd m = mean_std({0.7, 0.8, 0.9});
        CHECK(m.mean == doctest::Approx(0.8));
        CHECK(m.stdev == doctest::Approx(0.1));
        CHECK(m.n == 3);
        CHECK(mean_std({0.5}).stdev == 0.0);
        const std::string csv = summary_csv({{"g100", "claf", {0.7, 0.8, 0.9}}});
        CHECK(csv.rfind("setting,method,n,mean,std,scores\n", 0) == 0);
        CHECK(csv.find("g100,claf,3,") != std::string::npos);
        CHECK(csv.find("0.7;0.8;0.9") != std::string::npos);
    }

    TEST_CASE("evaluation reads only the EMA network and never mutates state") {
        const fixture::TinyRun run(2);
        Rng rng(3);
        ModelState m(run.model, rng);
        const auto test = make_synthetic_dataset({4, 10, 16, 0.25, 99});
        const auto before = fixture::state_hash(m);
        const EvalRecord r = evaluate(m, *test, 7);
        CHECK(fixture::state_hash(m) == before);
        CHECK(r.iter == 7);
        CHECK(r.per_class.size() == 4);
        CHECK((r.top1 >= 0.0 && r.top1 <= 1.0));
        CHECK(evaluate(m, *test, 7).top1 == r.top1);
        // Batch size does not change predictions (eval mode BN uses running statistics).
        CHECK(predict(m, *test, 7) == predict(m, *test, 256));

        const auto wrong_k = make_synthetic_dataset({3, 10, 16, 0.25, 99});
        CHECK_THROWS_AS(evaluate(m, *wrong_k), std::invalid_argument);
        InMemoryDataset empty("empty", 4, 3, 16, 16);
        CHECK_THROWS_AS(evaluate(m, empty), std::invalid_argument);
    }

    TEST_CASE("feature export round-trips bit-exactly") {
        const fixture::TinyRun run(2);
        Rng rng(5);
        ModelState m(run.model, rng);
        const auto data = make_synthetic_dataset({4, 9, 16, 0.25, 1});
        const auto path = temp_path("features.bin");
        export_features(m, *data, path.string(), {{"checkpoint_hash", "abc123"}});
        const FeatureFile f = read_features(path.string());
        CHECK(f.rows == data->size());
        CHECK(f.dim == m.feature_dim());
        CHECK(f.header["checkpoint_hash"] == "abc123");
        CHECK(f.header["rows"] == data->size());
        std::vector<std::size_t> idx(data->size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Tensor images = gather_images(*data, idx);
        standardize(images);
        const MatrixF z = m.encode(images, true).z;
        CHECK(f.features == z.storage());
        for (std::size_t i = 0; i < f.rows; ++i) CHECK(f.labels[i] == data->label(i));

        std::ofstream(path, std::ios::binary) << "garbage";
        CHECK_THROWS(read_features(path.string()));
        std::filesystem::remove(path);
        CHECK_THROWS(export_features(m, *data, "/nonexistent-dir/x.bin"));
    }
}
