#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace msplab {

struct HorizontalFlip {
    double probability = 0.5;
};

/// Zero-pad every side by `padding`, then take an h x w window at a uniform offset.
struct RandomCrop {
    std::size_t padding = 4;
};

/// Additive iid N(0, sigma^2) noise in feature units.
struct GaussianJitter {
    double sigma = 0.1;
};

using Transform = std::variant<HorizontalFlip, RandomCrop, GaussianJitter>;

inline std::string describe(const Transform& t) {
    if (const auto* f = std::get_if<HorizontalFlip>(&t)) return "flip:" + std::to_string(f->probability);
    if (const auto* c = std::get_if<RandomCrop>(&t)) return "crop:" + std::to_string(c->padding);
    return "jitter:" + std::to_string(std::get<GaussianJitter>(t).sigma);
}

enum class Regime { NoAugmentation, Standard, Targeted };

inline std::string regime_name(Regime r) {
    switch (r) {
        case Regime::NoAugmentation: return "none";
        case Regime::Standard: return "standard";
        case Regime::Targeted: return "targeted";
    }
    return "?";
}

struct AugmentationPolicy {
    Regime regime = Regime::NoAugmentation;
    int warmup_epochs = 3;
    double target_fraction = 0.2;
    std::vector<Transform> transforms;
};

inline void validate(const AugmentationPolicy& policy) {
    if (policy.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (!(policy.target_fraction > 0.0 && policy.target_fraction <= 1.0)) {
        throw ConfigError("target_fraction must lie in (0, 1]");
    }
    for (const auto& t : policy.transforms) {
        if (const auto* f = std::get_if<HorizontalFlip>(&t); f && !(f->probability >= 0.0 && f->probability <= 1.0)) {
            throw ConfigError("flip probability must lie in [0, 1]");
        }
        if (const auto* j = std::get_if<GaussianJitter>(&t); j && !(j->sigma >= 0.0)) {
            throw ConfigError("jitter sigma must be >= 0");
        }
    }
}

struct RngKey {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t example_id = 0;
};

namespace detail {

struct ImageDims {
    std::size_t c, h, w;
};

inline ImageDims image_dims(const Shape& shape, const char* what) {
    if (shape.size() != 3) {
        throw DimensionError(std::string(what) + " needs [c x h x w] features, got " + shape_str(shape));
    }
    return {shape[0], shape[1], shape[2]};
}

} // namespace detail

/// Returns an augmented copy; the input is not modified. Each transform in
/// the list draws from its own stream keyed on (seed, epoch, example id,
/// position), so the view is reproducible and independent of call order.
inline std::vector<double> apply_transforms(std::span<const double> features, const Shape& shape,
                                            std::span<const Transform> transforms, const RngKey& key) {
    if (shape_numel(shape) != features.size()) {
        throw DimensionError("apply_transforms: " + std::to_string(features.size()) + " values for shape " +
                             shape_str(shape));
    }
    std::vector<double> x(features.begin(), features.end());
    const RandomStream base = RandomStream(key.seed, "augment").derive(key.epoch).derive(key.example_id);
    for (std::size_t t = 0; t < transforms.size(); ++t) {
        RandomStream rng = base.derive(t);
        const auto& transform = transforms[t];
        if (const auto* flip = std::get_if<HorizontalFlip>(&transform)) {
            const auto d = detail::image_dims(shape, "HorizontalFlip");
            if (!rng.bernoulli(flip->probability)) continue;
            for (std::size_t p = 0; p < d.c * d.h; ++p) std::reverse(x.begin() + p * d.w, x.begin() + (p + 1) * d.w);
        } else if (const auto* crop = std::get_if<RandomCrop>(&transform)) {
            const auto d = detail::image_dims(shape, "RandomCrop");
            const std::size_t pad = crop->padding;
            const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
            const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
            if (dy == 0 && dx == 0) continue;
            std::vector<double> out(x.size(), 0.0);
            const auto H = static_cast<std::ptrdiff_t>(d.h), W = static_cast<std::ptrdiff_t>(d.w);
            for (std::size_t c = 0; c < d.c; ++c)
                for (std::ptrdiff_t r = 0; r < H; ++r) {
                    const std::ptrdiff_t sr = r + dy;
                    if (sr < 0 || sr >= H) continue;
                    for (std::ptrdiff_t col = 0; col < W; ++col) {
                        const std::ptrdiff_t sc = col + dx;
                        if (sc < 0 || sc >= W) continue;
                        out[(c * d.h + r) * d.w + col] = x[(c * d.h + sr) * d.w + sc];
                    }
                }
            x = std::move(out);
        } else {
            const double sigma = std::get<GaussianJitter>(transform).sigma;
            if (sigma == 0.0) continue;
            for (auto& v : x) v += sigma * rng.normal();
        }
    }
    return x;
}

struct MspEntry {
    std::size_t id;
    double msp;
};

/// Example ids to augment at `epoch` (1-based) under a Targeted policy:
/// everything during warmup, afterwards the floor(target_fraction * N) ids
/// with the lowest previous-epoch MSP (ties by ascending id). Returned ascending.
inline std::vector<std::size_t> select_targets(const AugmentationPolicy& policy, int epoch,
                                               std::span<const MspEntry> previous_msp, std::size_t n) {
    if (policy.regime != Regime::Targeted) throw ContractError("select_targets requires the targeted regime");
    validate(policy);
    if (epoch < 1) throw ContractError("epochs are 1-based");
    std::vector<std::size_t> ids;
    if (epoch <= policy.warmup_epochs) {
        ids.resize(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = i;
        return ids;
    }
    if (previous_msp.size() != n) {
        throw ContractError("select_targets: epoch " + std::to_string(epoch) + " needs previous MSPs for all " +
                            std::to_string(n) + " examples, got " + std::to_string(previous_msp.size()));
    }
    std::vector<MspEntry> table(previous_msp.begin(), previous_msp.end());
    std::vector<bool> seen(n, false);
    for (const auto& e : table) {
        if (e.id >= n || seen[e.id]) throw ContractError("select_targets: MSP table must cover each id exactly once");
        seen[e.id] = true;
    }
    const auto k = static_cast<std::size_t>(policy.target_fraction * static_cast<double>(n) + 1e-9);
    auto lower = [](const MspEntry& a, const MspEntry& b) { return a.msp < b.msp || (a.msp == b.msp && a.id < b.id); };
    std::partial_sort(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(k), table.end(), lower);
    ids.reserve(k);
    for (std::size_t i = 0; i < k; ++i) ids.push_back(table[i].id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Dense form: `previous_msp[id]` is the MSP of example id; empty = absent.
inline std::vector<std::size_t> select_targets(const AugmentationPolicy& policy, int epoch,
                                               std::span<const double> previous_msp, std::size_t n) {
    std::vector<MspEntry> table;
    table.reserve(previous_msp.size());
    for (std::size_t i = 0; i < previous_msp.size(); ++i) table.push_back({i, previous_msp[i]});
    return select_targets(policy, epoch, std::span<const MspEntry>(table), n);
}

/// Per-example augment flags for one epoch.
inline std::vector<bool> regime_mask(const AugmentationPolicy& policy, int epoch, std::span<const double> previous_msp,
                                     std::size_t n) {
    switch (policy.regime) {
        case Regime::NoAugmentation: return std::vector<bool>(n, false);
        case Regime::Standard: return std::vector<bool>(n, true);
        case Regime::Targeted: {
            std::vector<bool> mask(n, false);
            for (auto id : select_targets(policy, epoch, previous_msp, n)) mask[id] = true;
            return mask;
        }
    }
    return std::vector<bool>(n, false);
}

} // namespace msplab
