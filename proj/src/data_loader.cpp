#include "claf/data_loader.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace claf {

void standardize(Tensor& images) {
    const std::size_t c = images.rank() == 4 ? images.dim(1) : images.dim(0);
    const std::vector<float> mean(c, kPixelMean), stdev(c, kPixelStd);
    normalize_channels(images, mean, stdev);
}

IndexSampler::IndexSampler(std::size_t n, std::uint64_t seed) : rng_(seed), perm_(n) {
    if (n == 0) throw std::invalid_argument("IndexSampler: empty pool");
    reshuffle();
}

void IndexSampler::reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    for (std::size_t i = perm_.size() - 1; i > 0; --i) std::swap(perm_[i], perm_[uniform_index(rng_, i + 1)]);
    pos_ = 0;
}

std::vector<std::size_t> IndexSampler::next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
        if (pos_ == perm_.size()) {
            reshuffle();
            ++epoch_;
        }
        out.push_back(perm_[pos_++]);
    }
    return out;
}

std::string IndexSampler::serialize() const {
    std::ostringstream os;
    os << rng_ << ' ' << pos_ << ' ' << epoch_ << ' ' << perm_.size();
    for (auto p : perm_) os << ' ' << p;
    return os.str();
}

void IndexSampler::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::size_t n = 0;
    is >> rng_ >> pos_ >> epoch_ >> n;
    if (!is || n != perm_.size()) throw std::runtime_error("IndexSampler: state does not match pool size");
    for (auto& p : perm_) is >> p;
    if (!is || pos_ > n) throw std::runtime_error("IndexSampler: malformed state");
}

TrainLoader::TrainLoader(const ImageDataset& source, const SplitManifest& manifest, std::size_t batch_labeled,
                         std::size_t batch_unlabeled, AugmentPolicy policy, std::uint64_t master_seed)
    : source_(source),
      labeled_pool_(manifest.labeled_pool()),
      bl_(batch_labeled),
      bu_(batch_unlabeled),
      policy_(policy),
      aug_seed_(derive_seed(master_seed, RngStreams::kAugment)),
      labeled_sampler_(labeled_pool_.size(), derive_seed(derive_seed(master_seed, RngStreams::kData), "labeled")),
      unlabeled_sampler_(std::max<std::size_t>(manifest.unlabeled_pool().size(), 1),
                         derive_seed(derive_seed(master_seed, RngStreams::kData), "unlabeled")) {
    if (bl_ == 0) throw std::invalid_argument("TrainLoader: labeled batch size must be positive");
    for (const auto& [idx, label] : manifest.unlabeled_pool()) unlabeled_pool_.push_back(idx);
    if (unlabeled_pool_.empty() && bu_ > 0) throw std::invalid_argument("TrainLoader: empty unlabeled pool");
    consumed_state_ = sampler_state();
}

TrainLoader::~TrainLoader() { drop_pending(); }

void TrainLoader::drop_pending() {
    if (pending_) {
        pending_->wait();
        pending_.reset();
    }
}

TrainLoader::Draw TrainLoader::draw() {
    Draw d{step_++, {}, {}};
    for (auto p : labeled_sampler_.next(bl_)) d.labeled.push_back(p);
    if (bu_ > 0)
        for (auto p : unlabeled_sampler_.next(bu_)) d.unlabeled.push_back(unlabeled_pool_[p]);
    return d;
}

TrainBatch TrainLoader::build(const Draw& d) const {
    TrainBatch b;
    b.step = d.step;
    const std::size_t c = source_.channels(), h = source_.height(), w = source_.width();
    b.labeled = Tensor({d.labeled.size(), c, h, w});
    b.weak = Tensor({d.unlabeled.size(), c, h, w});
    b.strong = Tensor({d.unlabeled.size(), c, h, w});
    for (auto p : d.labeled) {
        b.labeled_ids.push_back(labeled_pool_[p].first);
        b.labels.push_back(labeled_pool_[p].second);
    }
    b.unlabeled_ids = d.unlabeled;

    const auto nl = static_cast<std::ptrdiff_t>(d.labeled.size());
    const auto nu = static_cast<std::ptrdiff_t>(d.unlabeled.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < nl + nu; ++i) {
        Tensor img({c, h, w});
        if (i < nl) {
            const auto slot = static_cast<std::size_t>(i);
            source_.image(b.labeled_ids[slot], img.values());
            Rng rng(derive_seed(aug_seed_, d.step, slot, 0));
            const Tensor out = weak_augment(img, rng, policy_);
            std::copy(out.values().begin(), out.values().end(), b.labeled.slice(slot).begin());
        } else {
            const auto slot = static_cast<std::size_t>(i - nl);
            source_.image(d.unlabeled[slot], img.values());
            Rng rw(derive_seed(aug_seed_, d.step, slot, 1));
            const Tensor weak = weak_augment(img, rw, policy_);
            std::copy(weak.values().begin(), weak.values().end(), b.weak.slice(slot).begin());
            Rng rs(derive_seed(aug_seed_, d.step, slot, 2));
            const Tensor strong = strong_augment(img, rs, policy_);
            std::copy(strong.values().begin(), strong.values().end(), b.strong.slice(slot).begin());
        }
    }
    standardize(b.labeled);
    if (nu > 0) {
        standardize(b.weak);
        standardize(b.strong);
    }
    return b;
}

TrainBatch TrainLoader::next() {
    TrainBatch out;
    if (pending_) {
        out = pending_->get();
        pending_.reset();
    } else {
        out = build(draw());
    }
    ++consumed_;
    consumed_state_ = sampler_state();
    if (prefetch_) pending_ = std::async(std::launch::async, [this, d = draw()] { return build(d); });
    return out;
}

void TrainLoader::set_prefetch(bool on) {
    if (!on && pending_) {
        // Rewind the samplers to the state right after the last consumed batch.
        drop_pending();
        const std::string state = consumed_state_;
        prefetch_ = false;
        deserialize(state);
        return;
    }
    prefetch_ = on;
}

std::string TrainLoader::sampler_state() const {
    std::ostringstream os;
    os << step_ << '\n' << labeled_sampler_.serialize() << '\n' << unlabeled_sampler_.serialize() << '\n';
    return os.str();
}

std::string TrainLoader::serialize() const { return consumed_state_; }

void TrainLoader::deserialize(const std::string& text) {
    drop_pending();
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("TrainLoader: malformed state");
    step_ = std::stoull(line);
    consumed_ = step_;
    if (!std::getline(is, line)) throw std::runtime_error("TrainLoader: malformed state");
    labeled_sampler_.deserialize(line);
    if (!std::getline(is, line)) throw std::runtime_error("TrainLoader: malformed state");
    unlabeled_sampler_.deserialize(line);
    consumed_state_ = sampler_state();
}

}  // namespace claf
