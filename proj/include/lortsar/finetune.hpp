#ifndef LORTSAR_FINETUNE_HPP
#define LORTSAR_FINETUNE_HPP

#include <lortsar/data.hpp>
#include <lortsar/errors.hpp>
#include <lortsar/format.hpp>
#include <lortsar/model.hpp>
#include <lortsar/rng.hpp>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace lortsar {

/// Mini-batch SGD with a step-decay schedule and optional linear warm-up.
/// momentum = 0 is plain SGD.
struct TrainConfig {
    double base_lr = 0.05;
    double decay_factor = 0.1;
    std::vector<std::size_t> milestones = {20};
    std::size_t warmup_epochs = 0;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    double momentum = 0.0;
};

inline void validate(const TrainConfig& cfg) {
    if (!(cfg.base_lr >= 0.0) || !std::isfinite(cfg.base_lr)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (!(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0)) {
        throw std::invalid_argument("TrainConfig: decay factor must be in (0, 1]");
    }
    if (cfg.epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (cfg.batch_size == 0) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    for (std::size_t i = 0; i < cfg.milestones.size(); ++i) {
        if (i > 0 && cfg.milestones[i] <= cfg.milestones[i - 1]) {
            throw std::invalid_argument("TrainConfig: milestones must be strictly increasing");
        }
        if (cfg.milestones[i] < cfg.warmup_epochs) {
            throw std::invalid_argument("TrainConfig: milestones must not fall inside the warm-up");
        }
    }
}

/// Warm-up: (epoch+1)/warmup · base_lr. Afterwards base_lr · decay^n where n
/// counts milestones ≤ epoch. The decay is applied as a division by
/// (1/decay)^n so that decimal schedules such as 0.0025 → 2.5e-4 → 2.5e-5
/// come out as the nearest doubles to those decimals.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (epoch >= cfg.epochs) {
        throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
    }
    if (epoch < cfg.warmup_epochs) {
        return static_cast<double>(epoch + 1) * cfg.base_lr / static_cast<double>(cfg.warmup_epochs);
    }
    int passed = 0;
    for (std::size_t m : cfg.milestones) passed += m <= epoch ? 1 : 0;
    if (passed == 0) return cfg.base_lr;
    return cfg.base_lr / std::pow(1.0 / cfg.decay_factor, passed);
}

/// Index of the largest entry, lowest index on ties.
inline std::size_t argmax(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

/// Top-1 accuracy from precomputed logits.
inline double top1(const Matrix& logits, std::span<const std::size_t> labels) {
    if (logits.rows() == 0 || logits.rows() != labels.size()) throw ShapeError("top1: need one label per logit row");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) hits += argmax(logits.row(i)) == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

inline std::vector<std::size_t> labels_of(std::span<const SkeletonSample> samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

/// Fraction of samples whose argmax logit equals the label.
inline double evaluate(const SkeletonModel& m, std::span<const SkeletonSample> test) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    return top1(forward(m, test), labels_of(test));
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double test_top1 = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;
    double best_top1 = 0.0;

    friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

inline std::string history_csv(const TrainHistory& h) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,test_top1\n";
    for (const auto& r : h.records) {
        os << r.epoch << ',' << to_text(r.lr) << ',' << to_text(r.train_loss) << ',' << to_text(r.test_top1) << '\n';
    }
    return os.str();
}

struct TrainResult {
    SkeletonModel model;
    TrainHistory history;
};

namespace detail {
inline void check_dataset(const SkeletonModel& m, std::span<const SkeletonSample> samples, const char* which) {
    if (samples.empty()) throw std::invalid_argument(std::string("train: ") + which + " set is empty");
    for (const auto& s : samples) {
        check_sample(m, s);
        if (s.label >= m.config.classes) {
            throw ShapeError(std::string("train: ") + which + " label " + std::to_string(s.label) +
                             " exceeds model classes " + std::to_string(m.config.classes));
        }
    }
}

/// Fisher-Yates driven by Rng(seed).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}
} // namespace detail

/// Gradient of the mean cross-entropy over `batch` w.r.t. every parameter,
/// accumulated sample by sample in batch order.
inline Backprop<SkeletonModel> batch_gradient(const SkeletonModel& m, std::span<const SkeletonSample* const> batch,
                                              double* loss_sum = nullptr) {
    Backprop<SkeletonModel> acc;
    acc.grad_params = zeros_like(m);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const SkeletonSample* s : batch) {
        ModelTape tape;
        const Matrix logits = forward_frames(m, s->frame_matrix(), tape);
        const std::size_t label = s->label;
        LossResult ce = cross_entropy(logits, std::span<const std::size_t>(&label, 1));
        if (loss_sum) *loss_sum += ce.loss;
        for (double& g : ce.grad_logits.values()) g *= inv_b;
        auto step = backward(tape, m, ce.grad_logits);
        zip_params(acc.grad_params, step.grad_params, [](std::span<double> a, std::span<const double> b) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        });
    }
    return acc;
}

/// Trains every parameter of `model` (both low-rank factors independently)
/// and evaluates on `test` after each epoch. Returns the final-epoch model.
inline TrainResult train(SkeletonModel model, std::span<const SkeletonSample> train_set,
                         std::span<const SkeletonSample> test_set, const TrainConfig& cfg) {
    validate(cfg);
    detail::check_dataset(model, train_set, "train");
    detail::check_dataset(model, test_set, "test");

    SkeletonModel velocity = zeros_like(model);
    TrainResult out;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        const auto order = detail::shuffled_indices(train_set.size(), cfg.seed + epoch);
        double loss_sum = 0.0;
        std::vector<const SkeletonSample*> batch;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
                batch.push_back(&train_set[order[i]]);
            }
            auto grad = batch_gradient(model, batch, &loss_sum);
            if (cfg.momentum > 0.0) {
                zip_params(velocity, grad.grad_params, [&](std::span<double> v, std::span<const double> g) {
                    for (std::size_t i = 0; i < v.size(); ++i) v[i] = cfg.momentum * v[i] + g[i];
                });
                zip_params(model, velocity, [&](std::span<double> p, std::span<const double> v) {
                    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * v[i];
                });
            } else {
                zip_params(model, grad.grad_params, [&](std::span<double> p, std::span<const double> g) {
                    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
                });
            }
        }
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(train_set.size()), evaluate(model, test_set)};
        if (out.history.records.empty() || rec.test_top1 > out.history.best_top1) {
            out.history.best_epoch = epoch;
            out.history.best_top1 = rec.test_top1;
        }
        out.history.records.push_back(rec);
    }
    out.model = std::move(model);
    return out;
}

} // namespace lortsar

#endif // LORTSAR_FINETUNE_HPP
