#pragma once

// Separation between the Atypical and Noisy rank distributions over training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "tracking.hpp"

namespace msplab {

struct SubsetSummary {
    int epoch = 0;
    Tag tag = Tag::Typical;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double mean = 0.0;
    std::size_t count = 0;
};

/// Inclusive linear-interpolation quantile of sorted values, p in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ContractError("quantile of an empty sample");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <class T>
std::vector<double> values_with_tag(std::span<const T> values, std::span<const Tag> tags, Tag tag) {
    if (values.size() != tags.size()) throw ContractError("values and tags differ in length");
    std::vector<double> out;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (tags[i] == tag) out.push_back(static_cast<double>(values[i]));
    return out;
}

inline SubsetSummary subset_summary(std::span<const std::size_t> ranks, std::span<const Tag> tags, Tag tag,
                                    int epoch = 0) {
    auto v = values_with_tag(ranks, tags, tag);
    if (v.empty()) throw ContractError("subset_summary: no examples tagged " + std::string(tag_name(tag)));
    std::sort(v.begin(), v.end());
    SubsetSummary s;
    s.epoch = epoch;
    s.tag = tag;
    s.q1 = quantile_sorted(v, 0.25);
    s.median = quantile_sorted(v, 0.5);
    s.q3 = quantile_sorted(v, 0.75);
    double total = 0.0;
    for (double x : v) total += x;
    s.mean = total / static_cast<double>(v.size());
    s.count = v.size();
    return s;
}

/// P(positive value > negative value) + 0.5 P(tie), by the rank-sum identity.
/// Exact: rank sums are carried as doubled integers.
inline double auroc_two_sample(std::span<const double> positive, std::span<const double> negative) {
    if (positive.empty() || negative.empty()) throw ContractError("auroc needs two non-empty samples");
    struct Item {
        double value;
        bool positive;
    };
    std::vector<Item> all;
    all.reserve(positive.size() + negative.size());
    for (double v : positive) all.push_back({v, true});
    for (double v : negative) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.value < b.value; });
    // twice the mid-rank (1-based) of each tie block is first + last
    std::uint64_t rank_sum_x2 = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].value == all[i].value) ++j;
        const std::uint64_t mid_x2 = (i + 1) + j;
        for (std::size_t k = i; k < j; ++k)
            if (all[k].positive) rank_sum_x2 += mid_x2;
        i = j;
    }
    const std::uint64_t n1 = positive.size(), n0 = negative.size();
    // U * 2 = rank_sum * 2 - n1 (n1 + 1)
    const std::uint64_t u_x2 = rank_sum_x2 - n1 * (n1 + 1);
    return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n1) * static_cast<double>(n0));
}

/// AUROC with Atypical as the positive class and Noisy as the negative one.
template <class T>
double auroc(std::span<const T> values, std::span<const Tag> tags) {
    const auto atypical = values_with_tag(values, tags, Tag::Atypical);
    const auto noisy = values_with_tag(values, tags, Tag::Noisy);
    if (atypical.empty() || noisy.empty()) throw ContractError("auroc: atypical and noisy strata must be non-empty");
    return auroc_two_sample(atypical, noisy);
}

inline double auroc(const RankRow& ranks, const std::vector<Tag>& tags) {
    return auroc(std::span<const std::size_t>(ranks), std::span<const Tag>(tags));
}

/// Length of the intersection of the two [q1, q3] intervals, divided by n.
inline double iqr_overlap(const SubsetSummary& a, const SubsetSummary& b, std::size_t n) {
    const double len = std::min(a.q3, b.q3) - std::max(a.q1, b.q1);
    return len > 0.0 ? len / static_cast<double>(n) : 0.0;
}

struct EpochSeparation {
    int epoch = 0;
    double auroc = 0.5;
    double iqr_overlap = 0.0;
    SubsetSummary atypical;
    SubsetSummary noisy;
};

struct SeparationReport {
    std::vector<EpochSeparation> epochs;

    const EpochSeparation& final_epoch() const {
        if (epochs.empty()) throw ContractError("empty separation report");
        return epochs.back();
    }
};

/// One entry per rank row; rank_table[e] is epoch e + 1.
inline SeparationReport separation_report(const std::vector<RankRow>& rank_table, const std::vector<Tag>& tags) {
    SeparationReport report;
    for (std::size_t e = 0; e < rank_table.size(); ++e) {
        const auto& ranks = rank_table[e];
        const int epoch = static_cast<int>(e) + 1;
        EpochSeparation s;
        s.epoch = epoch;
        s.atypical = subset_summary(ranks, tags, Tag::Atypical, epoch);
        s.noisy = subset_summary(ranks, tags, Tag::Noisy, epoch);
        s.auroc = auroc(ranks, tags);
        s.iqr_overlap = iqr_overlap(s.atypical, s.noisy, ranks.size());
        report.epochs.push_back(s);
    }
    return report;
}

} // namespace msplab
