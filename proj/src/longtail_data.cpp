#include "claf/longtail_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace claf {

InsufficientSamples::InsufficientSamples(std::size_t cls_, std::size_t needed, std::size_t available)
    : std::runtime_error("insufficient samples for class " + std::to_string(cls_) + ": split needs " +
                         std::to_string(needed) + ", source has " + std::to_string(available)),
      cls(cls_) {}

void SplitSpec::validate() const {
    if (num_classes < 2) throw InvalidSpec("split: K must be >= 2, got " + std::to_string(num_classes));
    if (head_labeled < 1) throw InvalidSpec("split: N1 must be >= 1");
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw InvalidSpec("split: gamma must be >= 1, got " + std::to_string(gamma));
}

std::vector<std::size_t> SplitSpec::labeled_counts() const { return longtail_counts(head_labeled, gamma, num_classes); }

std::vector<std::size_t> SplitSpec::unlabeled_counts() const {
    if (head_unlabeled == 0) return std::vector<std::size_t>(num_classes, 0);
    return longtail_counts(head_unlabeled, gamma, num_classes);
}

std::vector<std::size_t> longtail_counts(std::size_t head, double gamma, std::size_t num_classes) {
    if (num_classes < 2) throw InvalidSpec("longtail_counts: K must be >= 2, got " + std::to_string(num_classes));
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw InvalidSpec("longtail_counts: gamma must be >= 1");
    if (head < 1) throw InvalidSpec("longtail_counts: head count must be >= 1");
    std::vector<std::size_t> counts(num_classes);
    const double denom = static_cast<double>(num_classes - 1);
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double v = static_cast<double>(head) * std::pow(gamma, -static_cast<double>(k) / denom);
        counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
    }
    counts.front() = head;
    return counts;
}

std::vector<std::pair<std::size_t, int>> SplitManifest::labeled_pool() const {
    std::vector<std::pair<std::size_t, int>> out;
    for (std::size_t k = 0; k < labeled_indices.size(); ++k)
        for (auto i : labeled_indices[k]) out.emplace_back(i, static_cast<int>(k));
    return out;
}

std::vector<std::pair<std::size_t, int>> SplitManifest::unlabeled_pool() const {
    std::vector<std::pair<std::size_t, int>> out;
    for (std::size_t k = 0; k < unlabeled_indices.size(); ++k)
        for (auto i : unlabeled_indices[k]) out.emplace_back(i, static_cast<int>(k));
    return out;
}

nlohmann::ordered_json manifest_to_json(const SplitManifest& m) {
    nlohmann::ordered_json j;
    j["spec"] = {{"K", m.spec.num_classes},
                 {"N1", m.spec.head_labeled},
                 {"M1", m.spec.head_unlabeled},
                 {"gamma", m.spec.gamma},
                 {"seed", m.spec.seed}};
    j["labeled_counts"] = m.labeled_counts;
    j["unlabeled_counts"] = m.unlabeled_counts;
    j["labeled_indices"] = m.labeled_indices;
    j["unlabeled_indices"] = m.unlabeled_indices;
    return j;
}

SplitManifest manifest_from_json(const nlohmann::json& j) {
    SplitManifest m;
    const auto& s = j.at("spec");
    m.spec.num_classes = s.at("K").get<std::size_t>();
    m.spec.head_labeled = s.at("N1").get<std::size_t>();
    m.spec.head_unlabeled = s.at("M1").get<std::size_t>();
    m.spec.gamma = s.at("gamma").get<double>();
    m.spec.seed = s.at("seed").get<std::uint64_t>();
    m.spec.validate();
    m.labeled_counts = j.at("labeled_counts").get<std::vector<std::size_t>>();
    m.unlabeled_counts = j.at("unlabeled_counts").get<std::vector<std::size_t>>();
    m.labeled_indices = j.at("labeled_indices").get<std::vector<std::vector<std::size_t>>>();
    m.unlabeled_indices = j.at("unlabeled_indices").get<std::vector<std::vector<std::size_t>>>();
    if (m.labeled_indices.size() != m.spec.num_classes || m.unlabeled_indices.size() != m.spec.num_classes) {
        throw std::runtime_error("manifest: per-class index lists do not match K");
    }
    for (std::size_t k = 0; k < m.spec.num_classes; ++k) {
        if (m.labeled_indices[k].size() != m.labeled_counts.at(k) || m.unlabeled_indices[k].size() != m.unlabeled_counts.at(k)) {
            throw std::runtime_error("manifest: index list length disagrees with counts for class " + std::to_string(k));
        }
    }
    return m;
}

std::string manifest_dump(const SplitManifest& m) { return manifest_to_json(m).dump() + "\n"; }

std::vector<std::size_t> ImageDataset::class_histogram() const {
    std::vector<std::size_t> h(num_classes(), 0);
    for (std::size_t i = 0; i < size(); ++i) ++h.at(static_cast<std::size_t>(label(i)));
    return h;
}

InMemoryDataset::InMemoryDataset(std::string name, std::size_t classes, std::size_t c, std::size_t h, std::size_t w)
    : name_(std::move(name)), classes_(classes), c_(c), h_(h), w_(w) {}

void InMemoryDataset::reserve(std::size_t n) {
    pixels_.reserve(n * c_ * h_ * w_);
    labels_.reserve(n);
}

void InMemoryDataset::add(std::span<const std::uint8_t> chw, int label) {
    if (chw.size() != c_ * h_ * w_) throw std::invalid_argument("InMemoryDataset::add: wrong image size");
    if (label < 0 || static_cast<std::size_t>(label) >= classes_) throw std::invalid_argument("InMemoryDataset::add: label out of range");
    pixels_.insert(pixels_.end(), chw.begin(), chw.end());
    labels_.push_back(label);
}

void InMemoryDataset::image(std::size_t index, std::span<float> out) const {
    const std::size_t n = image_size();
    if (index >= labels_.size()) throw std::out_of_range("InMemoryDataset::image: index " + std::to_string(index));
    if (out.size() != n) throw std::invalid_argument("InMemoryDataset::image: output span has wrong size");
    const std::uint8_t* src = pixels_.data() + index * n;
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(src[i]) / 255.0f;
}

std::unique_ptr<InMemoryDataset> make_synthetic_dataset(const SyntheticSpec& spec, const std::string& name) {
    const std::size_t k = spec.num_classes, s = spec.image_size;
    auto ds = std::make_unique<InMemoryDataset>(name, k, 3, s, s);
    ds->reserve(k * spec.per_class);
    Rng rng(derive_seed(spec.seed, "synthetic"));
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::vector<std::uint8_t> img(3 * s * s);
    constexpr double pi = std::numbers::pi;
    for (std::size_t i = 0; i < k * spec.per_class; ++i) {
        const int cls = static_cast<int>(i % k);
        // Class signature: grating orientation and a colour mix; both jittered per image.
        const double angle = pi * cls / static_cast<double>(k) + (uniform01(rng) - 0.5) * 0.35;
        const double freq = 3.0 + 0.5 * static_cast<double>(cls % 3) + (uniform01(rng) - 0.5) * 0.6;
        const double phase = 2.0 * pi * uniform01(rng);
        const double hue = 2.0 * pi * cls / static_cast<double>(k) + (uniform01(rng) - 0.5) * 0.8;
        double color[3];
        for (int c = 0; c < 3; ++c) color[c] = 0.55 + 0.45 * std::cos(hue - 2.0 * pi * c / 3.0);
        const double cx = uniform01(rng), cy = uniform01(rng);
        for (int c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) {
                    const double u = static_cast<double>(x) / s, v = static_cast<double>(y) / s;
                    const double wave = std::sin(2.0 * pi * freq * (u * std::cos(angle) + v * std::sin(angle)) + phase);
                    const double blob = std::exp(-((u - cx) * (u - cx) + (v - cy) * (v - cy)) * 12.0);
                    double p = 0.5 + 0.3 * wave * color[c] + 0.2 * blob * (color[c] - 0.5) + noise(rng);
                    p = std::clamp(p, 0.0, 1.0);
                    img[(c * s + y) * s + x] = static_cast<std::uint8_t>(std::lround(p * 255.0));
                }
            }
        }
        ds->add(img, cls);
    }
    return ds;
}

std::unique_ptr<InMemoryDataset> load_cifar(const std::string& root, int classes, bool train) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    std::size_t label_bytes = 1;
    if (classes == 10) {
        const fs::path dir = fs::path(root) / "cifar-10-batches-bin";
        if (train) {
            for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
        } else {
            files.push_back(dir / "test_batch.bin");
        }
    } else if (classes == 100) {
        const fs::path dir = fs::path(root) / "cifar-100-binary";
        files.push_back(dir / (train ? "train.bin" : "test.bin"));
        label_bytes = 2;
    } else {
        throw std::invalid_argument("load_cifar: classes must be 10 or 100");
    }
    auto ds = std::make_unique<InMemoryDataset>("cifar" + std::to_string(classes) + (train ? "-train" : "-test"),
                                                static_cast<std::size_t>(classes), 3, 32, 32);
    constexpr std::size_t kPixels = 3 * 32 * 32;
    std::vector<std::uint8_t> record(label_bytes + kPixels);
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open CIFAR file " + f.string());
        while (in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()))) {
            const int label = record[label_bytes - 1];  // fine label for CIFAR-100
            ds->add(std::span<const std::uint8_t>(record).subspan(label_bytes), label);
        }
    }
    if (ds->size() == 0) throw std::runtime_error("no CIFAR records read from " + root);
    return ds;
}

SplitManifest build_splits(const ImageDataset& source, const SplitSpec& spec) {
    spec.validate();
    if (source.num_classes() != spec.num_classes) {
        throw InvalidSpec("split: spec has K=" + std::to_string(spec.num_classes) + " but dataset '" + source.name() +
                          "' has " + std::to_string(source.num_classes()) + " classes");
    }
    SplitManifest m;
    m.spec = spec;
    m.labeled_counts = spec.labeled_counts();
    m.unlabeled_counts = spec.unlabeled_counts();

    std::vector<std::vector<std::size_t>> by_class(spec.num_classes);
    for (std::size_t i = 0; i < source.size(); ++i) by_class.at(static_cast<std::size_t>(source.label(i))).push_back(i);

    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const std::size_t need = m.labeled_counts[k] + m.unlabeled_counts[k];
        if (by_class[k].size() < need) throw InsufficientSamples(k, need, by_class[k].size());
    }

    Rng rng(derive_seed(spec.seed, "split"));
    m.labeled_indices.resize(spec.num_classes);
    m.unlabeled_indices.resize(spec.num_classes);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        auto& pool = by_class[k];
        // Fisher-Yates with our own index draw, so the permutation does not depend on the standard library.
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
        const auto nl = static_cast<std::ptrdiff_t>(m.labeled_counts[k]);
        const auto nu = static_cast<std::ptrdiff_t>(m.unlabeled_counts[k]);
        m.labeled_indices[k].assign(pool.begin(), pool.begin() + nl);
        m.unlabeled_indices[k].assign(pool.begin() + nl, pool.begin() + nl + nu);
    }
    return m;
}

Tensor gather_images(const ImageDataset& source, std::span<const std::size_t> indices) {
    Tensor out({indices.size(), source.channels(), source.height(), source.width()});
    for (std::size_t i = 0; i < indices.size(); ++i) source.image(indices[i], out.slice(i));
    return out;
}

}  // namespace claf
