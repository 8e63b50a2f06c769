#include "claf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace claf {

namespace {

constexpr char kStateMagic[8] = {'C', 'L', 'A', 'F', 'S', 'T', 'A', 'T'};
constexpr std::uint32_t kStateVersion = 2;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("trainer state: truncated stream");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("trainer state: truncated stream");
    return s;
}

MatrixF to_float(const MatrixD& m, double scale = 1.0) {
    MatrixF out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.storage().size(); ++i) out.storage()[i] = static_cast<float>(m.storage()[i] * scale);
    return out;
}

void add_scaled(MatrixF& dst, const MatrixF& src, double scale = 1.0) {
    for (std::size_t i = 0; i < dst.storage().size(); ++i)
        dst.storage()[i] += static_cast<float>(scale) * src.storage()[i];
}

}  // namespace

void TrainConfig::validate() const {
    if (total_iters == 0) throw std::invalid_argument("trainer.total_iters must be positive");
    if (batch_labeled == 0) throw std::invalid_argument("trainer.batch_labeled must be positive");
    if (weights.u < 0.0 || weights.align < 0.0 || weights.c < 0.0)
        throw std::invalid_argument("loss weights must be non-negative");
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pseudo_label.tau must be in (0, 1)");
    if (!(t_proto > 0.0)) throw std::invalid_argument("pseudo_label.t_proto must be positive");
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive.temperature must be positive");
    if (queue_capacity == 0) throw std::invalid_argument("memory.capacity must be positive");
    if (!(blend_window >= 1.0)) throw std::invalid_argument("pseudo_label.blend_window must be >= 1");
    if (eval_interval == 0) throw std::invalid_argument("trainer.eval_interval must be positive");
    optim.validate();
    fa.validate();
}

NonFiniteLoss::NonFiniteLoss(std::string component, double value, std::size_t iter)
    : std::runtime_error("non-finite loss component " + component + " = " + std::to_string(value) + " at iteration " +
                         std::to_string(iter)),
      component_(std::move(component)),
      iter_(iter) {}

double total_loss(double l_cls, double l_u, double l_align, double l_c, const LossWeights& w, std::size_t iter) {
    const std::pair<const char*, double> parts[] = {{"l_cls", l_cls}, {"l_u", l_u}, {"l_align", l_align}, {"l_c", l_c}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v)) throw NonFiniteLoss(name, v, iter);
    return l_cls + w.u * l_u + w.align * l_align + w.c * l_c;
}

bool fa_active(std::size_t iter, std::size_t total, double start_fraction) {
    return static_cast<double>(iter) >= start_fraction * static_cast<double>(total);
}

nlohmann::ordered_json StepMetrics::to_json() const {
    nlohmann::ordered_json j;
    j["iter"] = iter;
    j["l_cls"] = l_cls;
    j["l_u"] = l_u;
    j["l_align"] = l_align;
    j["l_c"] = l_c;
    j["total"] = total;
    j["confident_frac"] = confident_frac;
    j["contrastive_frac"] = contrastive_frac;
    j["fa_count"] = fa_count;
    j["fa_on"] = fa_on;
    j["fa_skipped"] = fa_skipped;
    j["contrastive_skipped"] = contrastive_skipped;
    j["blend_availability"] = blend_availability;
    j["lr"] = lr;
    j["pseudo_hist"] = pseudo_hist;
    j["queue_fill"] = queue_fill;
    return j;
}

LossAndGrad cross_entropy(const MatrixD& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) throw std::invalid_argument("cross_entropy: label count mismatch");
    LossAndGrad out{0.0, softmax_rows(logits)};
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        out.loss -= std::log(std::max(out.grad(i, y), kProbEps));
        out.grad(i, y) -= 1.0;
        for (auto& g : out.grad.row(i)) g *= inv_b;
    }
    out.loss *= inv_b;
    return out;
}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, std::vector<std::size_t> labeled_counts)
    : model_cfg_(model_cfg),
      cfg_((cfg.validate(), cfg)),
      labeled_counts_(std::move(labeled_counts)),
      fa_prob_(fa_probability(labeled_counts_)),
      streams_(cfg.seed),
      model_(model_cfg, streams_.stream(RngStreams::kInit)),
      optim_(model_.online_params(), cfg.optim),
      memory_(model_cfg.num_classes, model_.feature_dim(), model_.proj_dim(), cfg.queue_capacity),
      blend_(model_cfg.num_classes, cfg.blend_window) {
    if (labeled_counts_.size() != model_cfg.num_classes)
        throw std::invalid_argument("Trainer: labeled counts length differs from num_classes");
}

PseudoLabelBundle Trainer::pseudo_labels(const MatrixF& z_weak, const Prototypes& protos, StepMetrics& m) {
    PseudoLabelBundle b;
    const MatrixD z = z_weak.cast<double>();
    b.p_hat = linear_pseudo_label(model_.classify(z_weak, Branch::online, nn::Pass::eval).cast<double>());
    b.q_hat = semantic_pseudo_label(z, protos, cfg_.t_proto, &semantic_zero_norm_);
    blend_.observe(b.p_hat, cfg_.tau);
    const auto defined = static_cast<double>(std::count(protos.defined.begin(), protos.defined.end(), true));
    m.blend_availability = defined / static_cast<double>(protos.defined.size());
    b.p_prime = blend(b.p_hat, b.q_hat, blend_.weights(), m.blend_availability);
    b.argmax_class = argmax_rows(b.p_prime);
    b.confident.resize(b.p_prime.rows());
    m.pseudo_hist.assign(model_.num_classes(), 0);
    std::size_t confident = 0;
    for (std::size_t i = 0; i < b.p_prime.rows(); ++i) {
        const auto row = b.p_prime.row(i);
        b.confident[i] = *std::max_element(row.begin(), row.end()) >= cfg_.tau;
        if (b.confident[i]) {
            ++confident;
            ++m.pseudo_hist[static_cast<std::size_t>(b.argmax_class[i])];
        }
    }
    m.confident_frac = b.p_prime.rows() ? static_cast<double>(confident) / static_cast<double>(b.p_prime.rows()) : 0.0;
    return b;
}

double Trainer::labeled_branch(const TrainBatch& batch) {
    const FeatureBatch zl = model_.encode(batch.labeled, Branch::online, nn::Pass::train, ViewTag::labeled);
    const MatrixF logits = model_.classify(zl.z, Branch::online, nn::Pass::train);
    const LossAndGrad ce = cross_entropy(logits.cast<double>(), batch.labels);
    if (!std::isfinite(ce.loss)) throw NonFiniteLoss("l_cls", ce.loss, iter_);
    model_.encoder_backward(model_.classifier_backward(to_float(ce.grad)));
    return ce.loss;
}

void Trainer::push_labeled(const MatrixF& z_l_ema, const std::vector<int>& labels) {
    const MatrixF e = model_.project(z_l_ema, true, nn::Pass::eval);
    for (std::size_t i = 0; i < labels.size(); ++i)
        memory_.push(static_cast<std::size_t>(labels[i]), z_l_ema.row(i), e.row(i), 1.0, false);
}

StepMetrics Trainer::finish(StepMetrics m) {
    m.total = total_loss(m.l_cls, m.l_u, m.l_align, m.l_c, cfg_.weights, iter_);
    m.lr = scheduled_lr(cfg_.optim, iter_, cfg_.total_iters);
    optim_.step(m.lr);
    model_.ema_update();
    m.queue_fill.resize(memory_.num_classes());
    for (std::size_t k = 0; k < memory_.num_classes(); ++k) m.queue_fill[k] = memory_.size(k);
    ++iter_;
    return m;
}

StepMetrics Trainer::step(const TrainBatch& batch) {
    StepMetrics m;
    m.iter = iter_;
    optim_.zero_grad();
    const LossWeights& w = cfg_.weights;
    const bool unlabeled = batch.weak.size() > 0;

    // Snapshot of the memory before this step's pushes.
    const Prototypes protos = memory_.prototypes();
    const EmbeddingQueueView snapshot = w.c > 0.0 ? memory_.embedding_view() : EmbeddingQueueView{};

    // (1)-(2) weak-view features and the blended pseudo-labels.
    PseudoLabelBundle labels;
    std::vector<double> s;
    if (unlabeled) {
        const FeatureBatch zw = model_.encode(batch.weak, Branch::online, nn::Pass::train_no_grad, ViewTag::weak);
        labels = pseudo_labels(zw.z, protos, m);
        s = confidence_vector(labels.p_prime, cfg_.tau);
        if (observer_) observer_(StepTrace{iter_, labels, s});
    }

    // (3) supervised term.
    m.l_cls = labeled_branch(batch);

    // (4), (5), (7) strong-view terms, sharing one encoder pass.
    if (unlabeled && (w.u > 0.0 || w.align > 0.0 || w.c > 0.0)) {
        const FeatureBatch zs = model_.encode(batch.strong, Branch::online, nn::Pass::train, ViewTag::strong);
        MatrixF grad_z(zs.z.rows(), zs.z.cols(), 0.0f);
        if (w.u > 0.0) {
            const MatrixF logits = model_.classify(zs.z, Branch::online, nn::Pass::train);
            const LossAndGrad fm = fixmatch_loss_logits(labels.p_prime, logits.cast<double>(), cfg_.tau);
            m.l_u = fm.loss;
            add_scaled(grad_z, model_.classifier_backward(to_float(fm.grad, w.u)));
        }
        if (w.align > 0.0) {
            const MatrixD z = zs.z.cast<double>();
            const MatrixD q = semantic_pseudo_label(z, protos, cfg_.t_proto);
            const LossAndGrad al = align_loss_grad(q);
            m.l_align = al.loss;
            add_scaled(grad_z, to_float(semantic_backward(z, protos, cfg_.t_proto, q, al.grad), w.align));
        }
        if (w.c > 0.0) {
            const MatrixF e = model_.project(zs.z, false, nn::Pass::train);
            ContrastiveBatch cb{e.cast<double>(), labels.argmax_class, s, &snapshot};
            const ContrastiveResult cr = contrastive_loss(cb, cfg_.temperature, true);
            m.l_c = cr.loss;
            m.contrastive_skipped = cr.skipped;
            add_scaled(grad_z, model_.head_backward(to_float(cr.grad, w.c)));
        }
        model_.encoder_backward(grad_z);
    }
    if (!s.empty())
        m.contrastive_frac = static_cast<double>(std::count_if(s.begin(), s.end(), [](double v) { return v > 0.0; })) /
                             static_cast<double>(s.size());

    // (6) queue updates from EMA features: labeled entries, then FA entries.
    const FeatureBatch zl_ema = model_.encode(batch.labeled, Branch::ema, nn::Pass::eval, ViewTag::labeled);
    push_labeled(zl_ema.z, batch.labels);
    m.fa_on = fa_active(iter_, cfg_.total_iters, cfg_.fa.start_fraction);
    if (m.fa_on) {
        // FA partners are EMA features of the weak views.
        const MatrixF zw_ema = unlabeled ? model_.encode(batch.weak, Branch::ema, nn::Pass::eval, ViewTag::weak).z
                                         : MatrixF(0, zl_ema.z.cols());
        const FABatchResult fa = augment_batch(zl_ema.z, batch.labels, zw_ema, fa_prob_, cfg_.fa,
                                               streams_.stream(RngStreams::kFeatureAug));
        m.fa_skipped = fa.skipped;
        m.fa_count = fa.features.size();
        if (!fa.features.empty()) {
            MatrixF z_aug(fa.features.size(), zl_ema.z.cols());
            for (std::size_t i = 0; i < fa.features.size(); ++i)
                std::copy(fa.features[i].z_aug.begin(), fa.features[i].z_aug.end(), z_aug.row(i).begin());
            const MatrixF e_aug = model_.project(z_aug, true, nn::Pass::eval);
            for (std::size_t i = 0; i < fa.features.size(); ++i)
                memory_.push(static_cast<std::size_t>(fa.features[i].label), z_aug.row(i), e_aug.row(i),
                             fa.features[i].lam, true);
        }
    }

    // (8)-(9) update and EMA.
    return finish(std::move(m));
}

StepMetrics Trainer::baseline_step(const TrainBatch& batch) {
    StepMetrics m;
    m.iter = iter_;
    optim_.zero_grad();
    const LossWeights& w = cfg_.weights;
    const Prototypes protos = memory_.prototypes();

    PseudoLabelBundle labels;
    const bool unlabeled = batch.weak.size() > 0;
    if (unlabeled) {
        const FeatureBatch zw = model_.encode(batch.weak, Branch::online, nn::Pass::train_no_grad, ViewTag::weak);
        labels = pseudo_labels(zw.z, protos, m);
        if (observer_) {
            const std::vector<double> s = confidence_vector(labels.p_prime, cfg_.tau);
            observer_(StepTrace{iter_, labels, s});
        }
    }

    m.l_cls = labeled_branch(batch);

    if (unlabeled && (w.u > 0.0 || w.align > 0.0)) {
        const FeatureBatch zs = model_.encode(batch.strong, Branch::online, nn::Pass::train, ViewTag::strong);
        MatrixF grad_z(zs.z.rows(), zs.z.cols(), 0.0f);
        if (w.u > 0.0) {
            const MatrixF logits = model_.classify(zs.z, Branch::online, nn::Pass::train);
            const LossAndGrad fm = fixmatch_loss_logits(labels.p_prime, logits.cast<double>(), cfg_.tau);
            m.l_u = fm.loss;
            add_scaled(grad_z, model_.classifier_backward(to_float(fm.grad, w.u)));
        }
        if (w.align > 0.0) {
            const MatrixD z = zs.z.cast<double>();
            const MatrixD q = semantic_pseudo_label(z, protos, cfg_.t_proto);
            const LossAndGrad al = align_loss_grad(q);
            m.l_align = al.loss;
            add_scaled(grad_z, to_float(semantic_backward(z, protos, cfg_.t_proto, q, al.grad), w.align));
        }
        model_.encoder_backward(grad_z);
    }

    const FeatureBatch zl_ema = model_.encode(batch.labeled, Branch::ema, nn::Pass::eval, ViewTag::labeled);
    push_labeled(zl_ema.z, batch.labels);
    return finish(std::move(m));
}

StepMetrics Trainer::supervised_step(const TrainBatch& batch) {
    StepMetrics m;
    m.iter = iter_;
    optim_.zero_grad();
    m.l_cls = labeled_branch(batch);
    const FeatureBatch zl_ema = model_.encode(batch.labeled, Branch::ema, nn::Pass::eval, ViewTag::labeled);
    push_labeled(zl_ema.z, batch.labels);
    return finish(std::move(m));
}

void Trainer::save_state(std::ostream& os) {
    os.write(kStateMagic, sizeof kStateMagic);
    put(os, kStateVersion);
    put<std::uint64_t>(os, iter_);
    put<std::uint64_t>(os, semantic_zero_norm_);
    const auto named = model_.named_state();
    put<std::uint64_t>(os, named.size());
    for (const auto& [name, values] : named) {
        put_string(os, name);
        put<std::uint64_t>(os, values->size());
        os.write(reinterpret_cast<const char*>(values->data()), static_cast<std::streamsize>(values->size() * sizeof(float)));
    }
    const auto& acc = model_.ema_accumulator();
    put<std::uint64_t>(os, acc.size());
    for (const auto& a : acc) {
        put<std::uint64_t>(os, a.size());
        os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    }
    optim_.save(os);
    memory_.save(os);
    const auto& hist = blend_.histogram();
    put<std::uint64_t>(os, hist.size());
    os.write(reinterpret_cast<const char*>(hist.data()), static_cast<std::streamsize>(hist.size() * sizeof(double)));
    put_string(os, streams_.serialize());
    if (!os) throw std::runtime_error("trainer state: write failed");
}

void Trainer::load_state(std::istream& is) {
    char magic[sizeof kStateMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kStateMagic, sizeof magic) != 0)
        throw std::runtime_error("trainer state: bad magic");
    if (get<std::uint32_t>(is) != kStateVersion) throw std::runtime_error("trainer state: unsupported version");
    iter_ = get<std::uint64_t>(is);
    semantic_zero_norm_ = get<std::uint64_t>(is);
    const auto named = model_.named_state();
    if (get<std::uint64_t>(is) != named.size()) throw std::runtime_error("trainer state: tensor count mismatch");
    for (const auto& [name, values] : named) {
        if (get_string(is) != name) throw std::runtime_error("trainer state: tensor order mismatch at " + name);
        if (get<std::uint64_t>(is) != values->size()) throw std::runtime_error("trainer state: shape mismatch at " + name);
        if (!is.read(reinterpret_cast<char*>(values->data()), static_cast<std::streamsize>(values->size() * sizeof(float))))
            throw std::runtime_error("trainer state: truncated stream");
    }
    auto& acc = model_.ema_accumulator();
    acc.resize(get<std::uint64_t>(is));
    if (!acc.empty() && acc.size() != named.size() / 2) throw std::runtime_error("trainer state: EMA accumulator mismatch");
    for (auto& a : acc) {
        a.resize(get<std::uint64_t>(is));
        if (!is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double))))
            throw std::runtime_error("trainer state: truncated stream");
    }
    optim_.load(is);
    memory_.load(is);
    auto& hist = blend_.histogram();
    if (get<std::uint64_t>(is) != hist.size()) throw std::runtime_error("trainer state: histogram size mismatch");
    if (!is.read(reinterpret_cast<char*>(hist.data()), static_cast<std::streamsize>(hist.size() * sizeof(double))))
        throw std::runtime_error("trainer state: truncated stream");
    streams_.deserialize(get_string(is));
}

}  // namespace claf
