#pragma once

// Per-epoch softmax probability of each example's assigned label, and the
// dataset-wide ranks derived from it.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace msplab {

using MspRow = std::vector<double>;          // indexed by example id
using RankRow = std::vector<std::size_t>;    // indexed by example id

namespace detail {

/// Logits for every example of `features`, batched, without recording a graph.
inline std::vector<double> predict_logits(const Model& model, const std::vector<const std::vector<double>*>& features,
                                          std::size_t batch_size = 256) {
    NoGradGuard no_grad;
    const std::size_t d = model.input_size();
    const std::size_t classes = model.spec().class_count;
    std::vector<double> out;
    out.reserve(features.size() * classes);
    for (std::size_t start = 0; start < features.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, features.size() - start);
        std::vector<double> flat;
        flat.reserve(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& x = *features[start + i];
            if (x.size() != d) throw DimensionError("example has " + std::to_string(x.size()) + " features, model expects " + std::to_string(d));
            flat.insert(flat.end(), x.begin(), x.end());
        }
        const Tensor logits = model.forward(Tensor({n, d}, std::move(flat)));
        out.insert(out.end(), logits.data().begin(), logits.data().end());
    }
    return out;
}

} // namespace detail

/// MSP row for `dataset` under `model`: softmax(model(x))[assigned_label],
/// evaluated on the stored (un-augmented) features.
inline MspRow record_msp(const Model& model, const StratifiedDataset& dataset) {
    std::vector<const std::vector<double>*> features;
    features.reserve(dataset.size());
    for (const auto& e : dataset.examples) features.push_back(&e.features);
    const auto logits = detail::predict_logits(model, features);
    const std::size_t classes = model.spec().class_count;
    MspRow row(dataset.size());
    for (const auto& e : dataset.examples) {
        const auto probs = softmax(std::span<const double>(logits).subspan(e.id * classes, classes));
        row[e.id] = probs[e.assigned_label];
    }
    return row;
}

/// Rank 0 = lowest MSP; ties by ascending id.
inline RankRow rank_examples(std::span<const double> msp) {
    std::vector<std::size_t> order(msp.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return msp[a] < msp[b]; });
    RankRow ranks(msp.size());
    for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r;
    return ranks;
}

/// Per-epoch MSP rows for one training run.
class MspTracker {
public:
    MspTracker() = default;
    explicit MspTracker(std::vector<Tag> tags) : tags_(std::move(tags)) {}

    /// Called once per epoch, after the epoch's last update. Epochs must arrive in order 1, 2, ...
    void record(const Model& model, const StratifiedDataset& dataset, int epoch) {
        if (tags_.empty()) tags_ = dataset.tags();
        add_row(epoch, record_msp(model, dataset));
    }

    void add_row(int epoch, MspRow row) {
        if (epoch != static_cast<int>(rows_.size()) + 1) {
            throw ContractError("MspTracker: expected epoch " + std::to_string(rows_.size() + 1) + ", got " +
                                std::to_string(epoch));
        }
        if (!tags_.empty() && row.size() != tags_.size()) throw ContractError("MspTracker: row does not cover all ids");
        for (double v : row) {
            if (!(v >= 0.0 && v <= 1.0)) throw ContractError("MspTracker: msp outside [0, 1]");
        }
        rows_.push_back(std::move(row));
    }

    std::size_t epochs() const { return rows_.size(); }
    const std::vector<Tag>& tags() const { return tags_; }

    /// Row for 1-based `epoch`.
    const MspRow& row(int epoch) const { return rows_.at(static_cast<std::size_t>(epoch - 1)); }

    /// Most recent row, or an empty span before the first record.
    std::span<const double> last_row() const {
        if (rows_.empty()) return {};
        return rows_.back();
    }

    RankRow ranks(int epoch) const { return rank_examples(row(epoch)); }

    std::vector<RankRow> rank_table() const {
        std::vector<RankRow> out;
        out.reserve(rows_.size());
        for (const auto& r : rows_) out.push_back(rank_examples(r));
        return out;
    }

private:
    std::vector<Tag> tags_;
    std::vector<MspRow> rows_;
};

} // namespace msplab
