#include "claf/evaluation.hpp"

#include "claf/data_loader.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace claf {

namespace {

constexpr char kFeatureMagic[8] = {'C', 'L', 'A', 'F', 'F', 'E', 'A', 'T'};

template <typename Fn>
void for_each_batch(const ImageDataset& data, std::size_t batch_size, Fn&& fn) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, data.size() - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        Tensor images = gather_images(data, idx);
        standardize(images);
        fn(start, images);
    }
}

}  // namespace

nlohmann::ordered_json EvalRecord::to_json() const {
    nlohmann::ordered_json j;
    j["iter"] = iter;
    j["top1"] = top1;
    j["per_class"] = per_class;
    j["tail_k"] = tail_k;
    j["tail"] = tail;
    return j;
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
    EvalRecord r;
    r.iter = j.at("iter").get<std::size_t>();
    r.top1 = j.at("top1").get<double>();
    r.per_class = j.at("per_class").get<std::vector<double>>();
    r.tail_k = j.value("tail_k", std::size_t{3});
    r.tail = j.value("tail", 0.0);
    return r;
}

EvalRecord score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                             std::size_t num_classes, std::size_t tail_k) {
    if (labels.empty()) throw std::invalid_argument("evaluate: empty test set");
    if (predictions.size() != labels.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
    if (tail_k == 0 || tail_k > num_classes) throw std::invalid_argument("evaluate: tail_k must be in [1, K]");
    std::vector<std::size_t> hit(num_classes, 0), total(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= num_classes) throw std::invalid_argument("evaluate: label outside [0, K)");
        ++total[y];
        if (predictions[i] == labels[i]) {
            ++hit[y];
            ++correct;
        }
    }
    EvalRecord r;
    r.tail_k = tail_k;
    r.top1 = static_cast<double>(correct) / static_cast<double>(labels.size());
    r.per_class.resize(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k)
        r.per_class[k] = total[k] ? static_cast<double>(hit[k]) / static_cast<double>(total[k]) : 0.0;
    r.tail = std::accumulate(r.per_class.end() - static_cast<std::ptrdiff_t>(tail_k), r.per_class.end(), 0.0) /
             static_cast<double>(tail_k);
    return r;
}

std::vector<int> predict(ModelState& state, const ImageDataset& data, std::size_t batch_size) {
    std::vector<int> out(data.size());
    for_each_batch(data, batch_size, [&](std::size_t start, const Tensor& images) {
        const FeatureBatch z = state.encode(images, Branch::ema, nn::Pass::eval);
        const MatrixF logits = state.classify(z.z, Branch::ema, nn::Pass::eval);
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const auto row = logits.row(i);
            out[start + i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    });
    return out;
}

EvalRecord evaluate(ModelState& state, const ImageDataset& test, std::size_t iter, std::size_t tail_k,
                    std::size_t batch_size) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    if (test.num_classes() != state.num_classes())
        throw std::invalid_argument("evaluate: test set has " + std::to_string(test.num_classes()) +
                                    " classes, model has " + std::to_string(state.num_classes()));
    std::vector<int> labels(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) labels[i] = test.label(i);
    EvalRecord r = score_predictions(predict(state, test, batch_size), labels, state.num_classes(), tail_k);
    r.iter = iter;
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty sequence");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double final_score(const std::vector<EvalRecord>& records, std::size_t window) {
    if (window == 0 || records.size() < window)
        throw std::invalid_argument("final_score: need at least " + std::to_string(window) + " evaluations, have " +
                                    std::to_string(records.size()));
    std::vector<double> top1;
    for (auto it = records.end() - static_cast<std::ptrdiff_t>(window); it != records.end(); ++it)
        top1.push_back(it->top1);
    return median(std::move(top1));
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    r.n = values.size();
    if (values.empty()) return r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.stdev = std::sqrt(ss / static_cast<double>(r.n - 1));
    }
    return r;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "setting,method,n,mean,std,scores\n";
    for (const auto& row : rows) {
        const MeanStd ms = mean_std(row.scores);
        os << row.setting << ',' << row.method << ',' << ms.n << ',' << ms.mean << ',' << ms.stdev << ',';
        os << std::defaultfloat;
        for (std::size_t i = 0; i < row.scores.size(); ++i) os << (i ? ";" : "") << row.scores[i];
        os << std::fixed;
        os << '\n';
    }
    return os.str();
}

void export_features(ModelState& state, const ImageDataset& data, const std::string& path,
                     const nlohmann::json& extra_header, std::size_t batch_size) {
    const std::size_t dim = state.feature_dim();
    std::vector<float> features(data.size() * dim);
    std::vector<std::int32_t> labels(data.size());
    for_each_batch(data, batch_size, [&](std::size_t start, const Tensor& images) {
        const FeatureBatch z = state.encode(images, Branch::ema, nn::Pass::eval);
        std::copy(z.z.storage().begin(), z.z.storage().end(), features.begin() + static_cast<std::ptrdiff_t>(start * dim));
    });
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data.label(i);

    nlohmann::ordered_json header;
    header["format"] = "claf-features";
    header["version"] = 1;
    header["rows"] = data.size();
    header["dim"] = dim;
    header["dtype"] = "float32";
    header["label_dtype"] = "int32";
    header["dataset"] = data.name();
    header["branch"] = "ema";
    for (const auto& [k, v] : extra_header.items()) header[k] = v;
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing: " + std::strerror(errno));
    os.write(kFeatureMagic, sizeof kFeatureMagic);
    const auto len = static_cast<std::uint64_t>(text.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(reinterpret_cast<const char*>(features.data()), static_cast<std::streamsize>(features.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
    if (!os) throw std::runtime_error("write to " + path + " failed: " + std::strerror(errno));
}

FeatureFile read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
    char magic[sizeof kFeatureMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0)
        throw std::runtime_error(path + ": not a feature file");
    std::uint64_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof len)) throw std::runtime_error(path + ": truncated header");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error(path + ": truncated header");
    FeatureFile f;
    f.header = nlohmann::json::parse(text);
    f.rows = f.header.at("rows").get<std::size_t>();
    f.dim = f.header.at("dim").get<std::size_t>();
    f.features.resize(f.rows * f.dim);
    f.labels.resize(f.rows);
    if (!is.read(reinterpret_cast<char*>(f.features.data()), static_cast<std::streamsize>(f.features.size() * sizeof(float))) ||
        !is.read(reinterpret_cast<char*>(f.labels.data()), static_cast<std::streamsize>(f.labels.size() * sizeof(std::int32_t))))
        throw std::runtime_error(path + ": truncated payload");
    return f;
}

}  // namespace claf
