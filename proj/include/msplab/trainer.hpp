#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "augmentation.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tracking.hpp"

namespace msplab {

struct TrainingSchedule {
    int epochs = 30;
    double base_lr = 0.1;
    double decay_factor = 0.2;
    std::vector<int> decay_epochs{10, 20};
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

/// The Cifar-10 schedule: 60 epochs, lr 0.1 decayed by 0.2 at epochs 10, 20, 30.
inline TrainingSchedule cifar10_schedule() {
    TrainingSchedule s;
    s.epochs = 60;
    s.decay_epochs = {10, 20, 30};
    return s;
}

inline void validate(const TrainingSchedule& s) {
    if (s.epochs < 1) throw ConfigError("epochs must be positive");
    if (!(s.base_lr >= 0.0) || !std::isfinite(s.base_lr)) throw ConfigError("base_lr must be finite and >= 0");
    if (!(s.decay_factor > 0.0 && s.decay_factor < 1.0)) throw ConfigError("decay_factor must lie in (0, 1)");
    if (s.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(s.momentum >= 0.0 && s.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(s.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    for (std::size_t i = 0; i < s.decay_epochs.size(); ++i) {
        if (s.decay_epochs[i] < 1 || s.decay_epochs[i] > s.epochs) {
            throw ConfigError("decay epoch " + std::to_string(s.decay_epochs[i]) + " outside [1, epochs]");
        }
        if (i > 0 && s.decay_epochs[i] <= s.decay_epochs[i - 1]) throw ConfigError("decay epochs must ascend");
    }
}

/// base_lr * decay_factor^(number of decay epochs <= epoch), epoch 1-based.
inline double learning_rate(const TrainingSchedule& schedule, int epoch) {
    if (epoch < 1 || epoch > schedule.epochs) {
        throw ContractError("learning_rate: epoch " + std::to_string(epoch) + " outside [1, " +
                            std::to_string(schedule.epochs) + "]");
    }
    int decays = 0;
    for (int e : schedule.decay_epochs) decays += e <= epoch ? 1 : 0;
    return schedule.base_lr * std::pow(schedule.decay_factor, decays);
}

struct TrainedModel {
    Model model;
    double final_loss = 0.0;  // mean minibatch loss of the last epoch
};

struct EpochStats {
    int epoch = 0;
    double learning_rate = 0.0;
    double mean_loss = 0.0;
    std::size_t augmented = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Plain (optionally momentum / weight-decay) SGD over `dataset`. Each epoch
/// asks the policy which examples to augment using the tracker's previous
/// row, walks seeded-shuffled minibatches, then records the epoch's MSPs.
/// Throws TrainingError on a non-finite loss; rows recorded so far remain in
/// the tracker.
inline TrainedModel train(const StratifiedDataset& dataset, const ModelSpec& spec, const TrainingSchedule& schedule,
                          const AugmentationPolicy& policy, MspTracker& tracker,
                          const EpochCallback& on_epoch = {}) {
    validate(schedule);
    validate(policy);
    const std::size_t n = dataset.size();
    if (n == 0) throw ContractError("train: empty dataset");
    Model model(spec);
    const std::size_t d = model.input_size();
    for (const auto& e : dataset.examples) {
        if (e.features.size() != d) {
            throw DimensionError("train: example " + std::to_string(e.id) + " has " + std::to_string(e.features.size()) +
                                 " features, model input is " + shape_str(spec.input_shape));
        }
        if (e.assigned_label >= spec.class_count) throw ContractError("train: label outside model classes");
    }

    auto& params = model.parameters();
    std::vector<std::vector<double>> velocity;
    if (schedule.momentum > 0.0) {
        for (const auto& p : params) velocity.emplace_back(p.value.numel(), 0.0);
    }

    std::vector<std::size_t> order(n);
    double last_loss = 0.0;
    for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
        const double lr = learning_rate(schedule, epoch);
        const auto mask = regime_mask(policy, epoch, tracker.last_row(), n);

        std::iota(order.begin(), order.end(), std::size_t{0});
        RandomStream(schedule.seed, "batches").derive(static_cast<std::uint64_t>(epoch)).shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += schedule.batch_size, ++batches) {
            const std::size_t b = std::min(schedule.batch_size, n - start);
            std::vector<double> flat;
            flat.reserve(b * d);
            std::vector<std::size_t> labels;
            labels.reserve(b);
            for (std::size_t i = start; i < start + b; ++i) {
                const Example& e = dataset.examples[order[i]];
                if (mask[e.id]) {
                    const auto view = apply_transforms(e.features, dataset.feature_shape, policy.transforms,
                                                       {schedule.seed, static_cast<std::uint64_t>(epoch), e.id});
                    flat.insert(flat.end(), view.begin(), view.end());
                } else {
                    flat.insert(flat.end(), e.features.begin(), e.features.end());
                }
                labels.push_back(e.assigned_label);
            }
            model.zero_grad();
            const Tensor logits = model.forward(Tensor({b, d}, std::move(flat)));
            auto ce = softmax_cross_entropy(logits, labels);
            const double loss = ce.loss.item();
            if (!std::isfinite(loss)) {
                throw TrainingError(epoch, batches,
                                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(batches));
            }
            backward(ce.loss);
            for (std::size_t p = 0; p < params.size(); ++p) {
                auto w = params[p].value.mutable_data();
                const auto g = params[p].value.grad();
                for (std::size_t i = 0; i < w.size(); ++i) {
                    double step = g[i] + schedule.weight_decay * w[i];
                    if (!velocity.empty()) {
                        velocity[p][i] = schedule.momentum * velocity[p][i] + step;
                        step = velocity[p][i];
                    }
                    w[i] -= lr * step;
                }
            }
            loss_sum += loss;
        }
        last_loss = loss_sum / static_cast<double>(batches);
        tracker.record(model, dataset, epoch);
        if (on_epoch) {
            on_epoch({epoch, lr, last_loss,
                      static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true))});
        }
    }
    model.zero_grad();
    return {std::move(model), last_loss};
}

/// Fraction of argmax-correct predictions (ties to the lowest class index).
inline double evaluate(const Model& model, const LabeledDataset& test_set) {
    if (test_set.size() == 0) return 0.0;
    std::vector<const std::vector<double>*> features;
    features.reserve(test_set.size());
    for (const auto& x : test_set.features) features.push_back(&x);
    const auto logits = detail::predict_logits(model, features);
    const std::size_t classes = model.spec().class_count;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const auto row = std::span<const double>(logits).subspan(i * classes, classes);
        correct += argmax(row) == test_set.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

inline double evaluate(const TrainedModel& trained, const LabeledDataset& test_set) {
    return evaluate(trained.model, test_set);
}

} // namespace msplab
