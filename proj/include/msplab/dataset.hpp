#pragma once

// Stratified training sets with ground-truth Typical / Atypical / Noisy tags.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace msplab {

/// Plain labeled data: one feature vector per item, all of `feature_shape`.
struct LabeledDataset {
    Shape feature_shape;
    std::vector<std::vector<double>> features;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
};

enum class Tag { Typical, Atypical, Noisy };

inline std::string_view tag_name(Tag tag) {
    switch (tag) {
        case Tag::Typical: return "typical";
        case Tag::Atypical: return "atypical";
        case Tag::Noisy: return "noisy";
    }
    return "?";
}

inline std::optional<Tag> parse_tag(std::string_view s) {
    if (s == "typical") return Tag::Typical;
    if (s == "atypical") return Tag::Atypical;
    if (s == "noisy") return Tag::Noisy;
    return std::nullopt;
}

struct Example {
    std::size_t id = 0;
    std::size_t source_index = 0;
    std::vector<double> features;
    std::size_t original_label = 0;
    std::size_t assigned_label = 0;
    Tag tag = Tag::Typical;
};

enum class LabelNoise {
    Permute,  // uniform permutation of the subset's labels (fixed points allowed)
    Uniform,  // each label redrawn iid uniform over all classes
};

struct FrequencyNoiseConfig {
    double atypical_fraction = 0.2;
    double noisy_fraction = 0.2;
    double duplicated_fraction = 0.3;
    std::size_t copies = 2;
    std::uint64_t seed = 0;
    LabelNoise label_noise = LabelNoise::Permute;
};

struct ScoreNoiseConfig {
    double atypical_fraction = 0.2;
    double noisy_fraction = 0.2;
    std::uint64_t seed = 0;
    LabelNoise label_noise = LabelNoise::Permute;
};

using Recipe = std::variant<FrequencyNoiseConfig, ScoreNoiseConfig>;

struct StratifiedDataset {
    std::vector<Example> examples;
    std::size_t class_count = 0;
    Shape feature_shape;
    Recipe recipe;

    std::size_t size() const { return examples.size(); }

    std::vector<Tag> tags() const {
        std::vector<Tag> out;
        out.reserve(examples.size());
        for (const auto& e : examples) out.push_back(e.tag);
        return out;
    }

    std::size_t count(Tag tag) const {
        return static_cast<std::size_t>(
            std::count_if(examples.begin(), examples.end(), [tag](const Example& e) { return e.tag == tag; }));
    }
};

inline std::size_t floor_count(double fraction, std::size_t n) {
    // guard against 0.2 * 1000 = 199.99999...
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

/// Reassign labels of `subset` with an explicit permutation: member i
/// receives the original label of member perm[i]. Tags become Noisy.
inline void apply_label_permutation(std::vector<Example>& subset, const std::vector<std::size_t>& perm) {
    if (perm.size() != subset.size()) throw ContractError("label permutation size does not match subset");
    std::vector<std::size_t> labels;
    labels.reserve(subset.size());
    for (auto p : perm) {
        if (p >= subset.size()) throw ContractError("label permutation entry out of range");
        labels.push_back(subset[p].original_label);
    }
    for (std::size_t i = 0; i < subset.size(); ++i) {
        subset[i].assigned_label = labels[i];
        subset[i].tag = Tag::Noisy;
    }
}

/// Uniformly permute the subset's original labels into assigned labels.
inline void shuffle_labels(std::vector<Example>& subset, std::uint64_t seed) {
    if (subset.size() < 2) throw ContractError("shuffle_labels needs at least 2 examples");
    std::vector<std::size_t> perm(subset.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RandomStream(seed, "shuffle_labels").shuffle(perm);
    apply_label_permutation(subset, perm);
}

namespace detail {

inline void corrupt_labels(std::vector<Example>& subset, std::uint64_t seed, LabelNoise mode, std::size_t classes) {
    if (subset.empty()) return;
    if (mode == LabelNoise::Permute) {
        if (subset.size() == 1) {
            // a lone member cannot be permuted; it keeps its label
            subset[0].tag = Tag::Noisy;
            return;
        }
        shuffle_labels(subset, seed);
        return;
    }
    RandomStream rng(seed, "uniform_labels");
    for (auto& e : subset) {
        e.assigned_label = static_cast<std::size_t>(rng.below(classes));
        e.tag = Tag::Noisy;
    }
}

inline void check_fraction(double f, const char* name) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1), got " + std::to_string(f));
}

inline Example make_example(const LabeledDataset& source, std::size_t index, Tag tag) {
    Example e;
    e.source_index = index;
    e.features = source.features[index];
    e.original_label = e.assigned_label = source.labels[index];
    e.tag = tag;
    return e;
}

inline void check_source(const LabeledDataset& source) {
    if (source.features.size() != source.labels.size()) {
        throw ContractError("source has " + std::to_string(source.features.size()) + " feature rows but " +
                            std::to_string(source.labels.size()) + " labels");
    }
    for (auto label : source.labels) {
        if (label >= source.class_count) throw ContractError("source label outside class range");
    }
}

} // namespace detail

/// Frequency-skew recipe: a class-balanced atypical sample appearing once, a
/// label-shuffled noisy sample, and a duplicated typical sample. The rest of
/// the source is discarded. Output size equals source size.
inline StratifiedDataset build_frequency_noise(const LabeledDataset& source, const FrequencyNoiseConfig& config) {
    detail::check_source(source);
    detail::check_fraction(config.atypical_fraction, "atypical_fraction");
    detail::check_fraction(config.noisy_fraction, "noisy_fraction");
    detail::check_fraction(config.duplicated_fraction, "duplicated_fraction");
    if (config.copies < 2) throw ConfigError("copies must be >= 2");
    const double total = config.atypical_fraction + config.noisy_fraction +
                         config.duplicated_fraction * static_cast<double>(config.copies);
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("atypical + noisy + duplicated * copies must equal 1, got " + std::to_string(total));
    }
    const std::size_t n = source.size();
    const std::size_t classes = source.class_count;
    if (classes == 0 || n < 10 * classes) {
        throw ConfigError("frequency recipe needs at least 10 examples per class (" + std::to_string(n) +
                          " examples, " + std::to_string(classes) + " classes)");
    }

    const std::size_t n_atypical = floor_count(config.atypical_fraction, n);
    const std::size_t n_noisy = floor_count(config.noisy_fraction, n);
    const std::size_t n_unique_typical = floor_count(config.duplicated_fraction, n);
    const std::size_t typical_slots = n - n_atypical - n_noisy;
    if (n_unique_typical * config.copies > typical_slots) throw ConfigError("duplicated sample overflows dataset");
    // floor rounding can leave a few slots; they are filled by single extra typical examples
    const std::size_t n_single_typical = typical_slots - n_unique_typical * config.copies;

    // stratified atypical sample: equal share per class, remainder round-robin from class 0
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < n; ++i) by_class[source.labels[i]].push_back(i);
    std::vector<bool> used(n, false);
    std::vector<std::size_t> atypical;
    RandomStream atypical_rng(config.seed, "frequency/atypical");
    for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t quota = n_atypical / classes + (c < n_atypical % classes ? 1 : 0);
        if (quota > by_class[c].size()) {
            throw ConfigError("class " + std::to_string(c) + " has too few examples for a balanced atypical sample");
        }
        for (auto i : atypical_rng.derive(c).sample(by_class[c], quota)) {
            atypical.push_back(i);
            used[i] = true;
        }
    }

    auto remaining = [&] {
        std::vector<std::size_t> r;
        for (std::size_t i = 0; i < n; ++i)
            if (!used[i]) r.push_back(i);
        return r;
    };

    std::vector<std::size_t> noisy = RandomStream(config.seed, "frequency/noisy").sample(remaining(), n_noisy);
    for (auto i : noisy) used[i] = true;
    std::vector<std::size_t> typical =
        RandomStream(config.seed, "frequency/typical").sample(remaining(), n_unique_typical + n_single_typical);

    std::vector<Example> noisy_examples;
    for (auto i : noisy) noisy_examples.push_back(detail::make_example(source, i, Tag::Noisy));
    detail::corrupt_labels(noisy_examples, mix_key(config.seed, fnv1a64("frequency/labels")), config.label_noise,
                           classes);

    // typical copies: the first n_unique_typical sampled examples are duplicated
    std::vector<std::size_t> copies_of(n, 0);
    for (std::size_t k = 0; k < typical.size(); ++k) copies_of[typical[k]] = k < n_unique_typical ? config.copies : 1;

    std::vector<Example> out;
    out.reserve(n);
    std::size_t next_noisy = 0;
    std::size_t next_atypical = 0;
    std::sort(atypical.begin(), atypical.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (next_atypical < atypical.size() && atypical[next_atypical] == i) {
            out.push_back(detail::make_example(source, i, Tag::Atypical));
            ++next_atypical;
        } else if (next_noisy < noisy_examples.size() && noisy_examples[next_noisy].source_index == i) {
            out.push_back(noisy_examples[next_noisy++]);
        } else {
            for (std::size_t c = 0; c < copies_of[i]; ++c) out.push_back(detail::make_example(source, i, Tag::Typical));
        }
    }
    for (std::size_t id = 0; id < out.size(); ++id) out[id].id = id;
    return {std::move(out), classes, source.feature_shape, config};
}

/// Score recipe: the lowest-scoring fraction becomes Atypical (ties by
/// index), a uniform sample of the rest gets shuffled labels, everything
/// else is Typical. Every source example is kept once, ids = source index.
inline StratifiedDataset build_score_noise(const LabeledDataset& source, std::span<const double> scores,
                                           const ScoreNoiseConfig& config) {
    detail::check_source(source);
    if (scores.size() != source.size()) {
        throw ContractError("build_score_noise: " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(source.size()) + " examples");
    }
    detail::check_fraction(config.atypical_fraction, "atypical_fraction");
    detail::check_fraction(config.noisy_fraction, "noisy_fraction");
    if (config.atypical_fraction + config.noisy_fraction >= 1.0) {
        throw ConfigError("atypical_fraction + noisy_fraction must be < 1");
    }
    const std::size_t n = source.size();
    const std::size_t n_atypical = floor_count(config.atypical_fraction, n);
    const std::size_t n_noisy = floor_count(config.noisy_fraction, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(detail::make_example(source, i, Tag::Typical));
    for (std::size_t r = 0; r < n_atypical; ++r) out[order[r]].tag = Tag::Atypical;

    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_atypical), order.end());
    std::sort(rest.begin(), rest.end());
    const auto noisy = RandomStream(config.seed, "score/noisy").sample(rest, n_noisy);
    std::vector<Example> noisy_examples;
    for (auto i : noisy) noisy_examples.push_back(out[i]);
    detail::corrupt_labels(noisy_examples, mix_key(config.seed, fnv1a64("score/labels")), config.label_noise,
                           source.class_count);
    for (auto& e : noisy_examples) out[e.source_index] = std::move(e);
    for (std::size_t id = 0; id < n; ++id) out[id].id = id;
    return {std::move(out), source.class_count, source.feature_shape, config};
}

/// Fraction of each example's k nearest neighbours (Euclidean, self
/// excluded, distance ties by index) sharing its label. Higher = more typical.
inline std::vector<double> typicality_score_oracle(const LabeledDataset& source, std::size_t k) {
    detail::check_source(source);
    const std::size_t n = source.size();
    if (k < 1 || k >= n) throw ContractError("typicality oracle needs 1 <= k < N");
    std::vector<double> scores(n);
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        const auto& xi = source.features[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const auto& xj = source.features[j];
            double d2 = 0.0;
            for (std::size_t f = 0; f < xi.size(); ++f) {
                const double diff = xi[f] - xj[f];
                d2 += diff * diff;
            }
            dist.emplace_back(d2, j);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::size_t agree = 0;
        for (std::size_t r = 0; r < k; ++r) agree += source.labels[dist[r].second] == source.labels[i] ? 1 : 0;
        scores[i] = static_cast<double>(agree) / static_cast<double>(k);
    }
    return scores;
}

/// Isotropic unit-variance Gaussian classes. Class c is centred at
/// separation * (+/-) e_{c mod dim}; the sign flips for c >= dim.
/// Items are ordered class-major.
inline LabeledDataset generate_gaussian_clusters(std::size_t class_count, std::size_t dim, std::size_t per_class,
                                                 double separation, std::uint64_t seed) {
    if (class_count < 2 || dim < 2 || per_class < 10) {
        throw ContractError("gaussian clusters need C >= 2, d >= 2, n >= 10");
    }
    if (class_count > 2 * dim) throw ContractError("gaussian clusters support at most 2*dim distinct centres");
    LabeledDataset out;
    out.feature_shape = {dim};
    out.class_count = class_count;
    RandomStream rng(seed, "gaussian_clusters");
    for (std::size_t c = 0; c < class_count; ++c) {
        const double sign = c < dim ? 1.0 : -1.0;
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<double> x(dim);
            for (auto& v : x) v = rng.normal();
            x[c % dim] += sign * separation;
            out.features.push_back(std::move(x));
            out.labels.push_back(c);
        }
    }
    return out;
}

/// Centre of class c as used by generate_gaussian_clusters.
inline std::vector<double> gaussian_cluster_center(std::size_t c, std::size_t dim, double separation) {
    std::vector<double> centre(dim, 0.0);
    centre[c % dim] = (c < dim ? 1.0 : -1.0) * separation;
    return centre;
}

} // namespace msplab
