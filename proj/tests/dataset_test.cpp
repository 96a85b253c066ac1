#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <msplab/dataset.hpp>

using namespace msplab;

namespace {

LabeledDataset labeled(std::size_t n, std::size_t classes) {
    LabeledDataset d;
    d.feature_shape = {2};
    d.class_count = classes;
    for (std::size_t i = 0; i < n; ++i) {
        d.features.push_back({static_cast<double>(i), static_cast<double>(i % 7)});
        d.labels.push_back(i % classes);
    }
    return d;
}

std::multiset<std::size_t> assigned_labels(const std::vector<Example>& xs) {
    std::multiset<std::size_t> s;
    for (const auto& e : xs) s.insert(e.assigned_label);
    return s;
}

std::multiset<std::size_t> original_labels(const std::vector<Example>& xs) {
    std::multiset<std::size_t> s;
    for (const auto& e : xs) s.insert(e.original_label);
    return s;
}

void expect_common_invariants(const StratifiedDataset& ds) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& e = ds.examples[i];
        EXPECT_EQ(e.id, i);
        if (e.tag != Tag::Noisy) EXPECT_EQ(e.assigned_label, e.original_label);
    }
}

bool identical(const StratifiedDataset& a, const StratifiedDataset& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.examples[i];
        const auto& y = b.examples[i];
        if (x.id != y.id || x.source_index != y.source_index || x.features != y.features ||
            x.original_label != y.original_label || x.assigned_label != y.assigned_label || x.tag != y.tag)
            return false;
    }
    return true;
}

}  // namespace

TEST(FrequencyNoise, DefaultCompositionOnHundred) {
    FrequencyNoiseConfig cfg;
    cfg.seed = 3;
    const auto ds = build_frequency_noise(labeled(100, 4), cfg);
    ASSERT_EQ(ds.size(), 100u);
    EXPECT_EQ(ds.count(Tag::Atypical), 20u);
    EXPECT_EQ(ds.count(Tag::Noisy), 20u);
    EXPECT_EQ(ds.count(Tag::Typical), 60u);
    std::map<std::size_t, int> typical_copies;
    std::map<std::size_t, int> atypical_copies;
    for (const auto& e : ds.examples) {
        if (e.tag == Tag::Typical) ++typical_copies[e.source_index];
        if (e.tag == Tag::Atypical) ++atypical_copies[e.source_index];
    }
    EXPECT_EQ(typical_copies.size(), 30u);
    for (auto [_, c] : typical_copies) EXPECT_EQ(c, 2);
    EXPECT_EQ(atypical_copies.size(), 20u);
    for (auto [_, c] : atypical_copies) EXPECT_EQ(c, 1);
    expect_common_invariants(ds);
}

TEST(FrequencyNoise, AtypicalSampleIsClassBalanced) {
    FrequencyNoiseConfig cfg;
    cfg.seed = 8;
    const auto ds = build_frequency_noise(labeled(1000, 10), cfg);
    std::map<std::size_t, int> per_class;
    for (const auto& e : ds.examples)
        if (e.tag == Tag::Atypical) ++per_class[e.original_label];
    ASSERT_EQ(per_class.size(), 10u);
    for (auto [_, c] : per_class) EXPECT_EQ(c, 20);
}

TEST(FrequencyNoise, BalanceRemainderGoesRoundRobinFromClassZero) {
    FrequencyNoiseConfig cfg;
    cfg.atypical_fraction = 0.1;
    cfg.noisy_fraction = 0.3;
    cfg.duplicated_fraction = 0.3;
    cfg.seed = 1;
    // 70 examples, 4 classes: 7 atypical -> classes 0,1,2 get 2, class 3 gets 1
    const auto ds = build_frequency_noise(labeled(70, 4), cfg);
    std::map<std::size_t, int> per_class;
    for (const auto& e : ds.examples)
        if (e.tag == Tag::Atypical) ++per_class[e.original_label];
    EXPECT_EQ(per_class[0], 2);
    EXPECT_EQ(per_class[1], 2);
    EXPECT_EQ(per_class[2], 2);
    EXPECT_EQ(per_class[3], 1);
    EXPECT_EQ(ds.size(), 70u);
}

TEST(FrequencyNoise, DegenerateRecipeDoublesHalfTheSource) {
    FrequencyNoiseConfig cfg;
    cfg.atypical_fraction = 0.0;
    cfg.noisy_fraction = 0.0;
    cfg.duplicated_fraction = 0.5;
    cfg.copies = 2;
    const auto src = labeled(40, 2);
    const auto ds = build_frequency_noise(src, cfg);
    ASSERT_EQ(ds.size(), 40u);
    EXPECT_EQ(ds.count(Tag::Typical), 40u);
    std::map<std::size_t, int> copies;
    for (const auto& e : ds.examples) {
        ++copies[e.source_index];
        EXPECT_EQ(e.features, src.features[e.source_index]);
    }
    EXPECT_EQ(copies.size(), 20u);
    for (auto [_, c] : copies) EXPECT_EQ(c, 2);
}

TEST(FrequencyNoise, FixedSeedRebuildIsIdentical) {
    FrequencyNoiseConfig cfg;
    cfg.seed = 77;
    const auto src = labeled(1000, 10);
    EXPECT_TRUE(identical(build_frequency_noise(src, cfg), build_frequency_noise(src, cfg)));
    cfg.seed = 78;
    EXPECT_FALSE(identical(build_frequency_noise(src, FrequencyNoiseConfig{.seed = 77}), build_frequency_noise(src, cfg)));
}

TEST(FrequencyNoise, ConfigErrors) {
    FrequencyNoiseConfig bad;
    bad.duplicated_fraction = 0.25;  // 0.2 + 0.2 + 0.5 != 1
    EXPECT_THROW(build_frequency_noise(labeled(100, 4), bad), ConfigError);
    EXPECT_THROW(build_frequency_noise(labeled(30, 4), FrequencyNoiseConfig{}), ConfigError);
    FrequencyNoiseConfig one_copy;
    one_copy.copies = 1;
    EXPECT_THROW(build_frequency_noise(labeled(100, 4), one_copy), ConfigError);
}

TEST(FrequencyNoise, RoundingLeftoverBecomesSingleTypical) {
    // N = 101: floor gives 20 + 20 + 30*2 = 100, the last slot is one extra typical example
    const auto ds = build_frequency_noise(labeled(101, 4), FrequencyNoiseConfig{});
    EXPECT_EQ(ds.size(), 101u);
    EXPECT_EQ(ds.count(Tag::Atypical), 20u);
    EXPECT_EQ(ds.count(Tag::Noisy), 20u);
    EXPECT_EQ(ds.count(Tag::Typical), 61u);
}

TEST(ScoreNoise, BottomScoresBecomeAtypical) {
    const auto src = labeled(10, 2);
    std::vector<double> scores{5, 0, 9, 1, 8, 7, 6, 4, 3, 2};
    ScoreNoiseConfig cfg;
    cfg.noisy_fraction = 0.0;
    const auto ds = build_score_noise(src, scores, cfg);
    std::set<std::size_t> atypical;
    for (const auto& e : ds.examples)
        if (e.tag == Tag::Atypical) atypical.insert(e.source_index);
    EXPECT_EQ(atypical, (std::set<std::size_t>{1, 3}));
    EXPECT_EQ(ds.count(Tag::Noisy), 0u);
    for (const auto& e : ds.examples) EXPECT_EQ(e.assigned_label, e.original_label);
}

TEST(ScoreNoise, TiesBreakByAscendingId) {
    const auto src = labeled(10, 2);
    std::vector<double> scores(10, 0.5);
    ScoreNoiseConfig cfg;
    cfg.noisy_fraction = 0.0;
    const auto ds = build_score_noise(src, scores, cfg);
    EXPECT_EQ(ds.examples[0].tag, Tag::Atypical);
    EXPECT_EQ(ds.examples[1].tag, Tag::Atypical);
    EXPECT_EQ(ds.count(Tag::Atypical), 2u);
}

TEST(ScoreNoise, DefaultFractionsOnThousandKeepEverySourceExample) {
    const auto src = labeled(1000, 10);
    std::vector<double> scores(1000);
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = std::sin(static_cast<double>(i));
    ScoreNoiseConfig cfg;
    cfg.seed = 2;
    const auto ds = build_score_noise(src, scores, cfg);
    EXPECT_EQ(ds.count(Tag::Atypical), 200u);
    EXPECT_EQ(ds.count(Tag::Noisy), 200u);
    EXPECT_EQ(ds.count(Tag::Typical), 600u);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(ds.examples[i].source_index, i);
        EXPECT_EQ(ds.examples[i].features, src.features[i]);
    }
    expect_common_invariants(ds);
}

TEST(ScoreNoise, LengthMismatchIsContractError) {
    std::vector<double> scores(9, 0.0);
    EXPECT_THROW(build_score_noise(labeled(10, 2), scores, ScoreNoiseConfig{}), ContractError);
}

TEST(ShuffleLabels, ExplicitSwap) {
    std::vector<Example> xs(2);
    xs[0].original_label = xs[0].assigned_label = 0;
    xs[1].original_label = xs[1].assigned_label = 1;
    apply_label_permutation(xs, {1, 0});
    EXPECT_EQ(xs[0].assigned_label, 1u);
    EXPECT_EQ(xs[1].assigned_label, 0u);
    EXPECT_EQ(xs[0].tag, Tag::Noisy);
    EXPECT_EQ(xs[1].tag, Tag::Noisy);
}

TEST(ShuffleLabels, SingletonIsContractError) {
    std::vector<Example> xs(1);
    EXPECT_THROW(shuffle_labels(xs, 0), ContractError);
}

TEST(ShuffleLabels, PreservesLabelMultisetForManySeeds) {
    RandomStream rng(1, "multiset");
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const std::size_t n = 2 + rng.below(60);
        const std::size_t classes = 2 + rng.below(9);
        std::vector<Example> xs(n);
        for (auto& e : xs) e.original_label = e.assigned_label = rng.below(classes);
        shuffle_labels(xs, seed);
        EXPECT_EQ(assigned_labels(xs), original_labels(xs)) << "seed " << seed;
        for (const auto& e : xs) EXPECT_EQ(e.tag, Tag::Noisy);
    }
}

TEST(ShuffleLabels, FixedPointRateNearOneTenthForTenClasses) {
    // 1000 labels, 100 per class: a uniform permutation keeps a label with
    // probability 100/1000 per position
    double total = 0.0;
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
        std::vector<Example> xs(1000);
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i].original_label = xs[i].assigned_label = i % 10;
        shuffle_labels(xs, static_cast<std::uint64_t>(seed));
        std::size_t kept = 0;
        for (const auto& e : xs) kept += e.assigned_label == e.original_label ? 1 : 0;
        const double rate = static_cast<double>(kept) / 1000.0;
        EXPECT_NEAR(rate, 0.1, 0.03) << "seed " << seed;
        total += rate;
    }
    EXPECT_NEAR(total / seeds, 0.1, 0.01);
}

TEST(LabelNoise, UniformModeRelabelsWithinClassRange) {
    FrequencyNoiseConfig cfg;
    cfg.label_noise = LabelNoise::Uniform;
    cfg.seed = 4;
    const auto ds = build_frequency_noise(labeled(200, 4), cfg);
    EXPECT_EQ(ds.count(Tag::Noisy), 40u);
    for (const auto& e : ds.examples) EXPECT_LT(e.assigned_label, 4u);
}

TEST(TypicalityOracle, SeparatedPureClustersScoreOne) {
    LabeledDataset d;
    d.feature_shape = {2};
    d.class_count = 2;
    for (int i = 0; i < 6; ++i) {
        d.features.push_back({0.1 * i, 0.0});
        d.labels.push_back(0);
        d.features.push_back({100.0 + 0.1 * i, 0.0});
        d.labels.push_back(1);
    }
    for (double s : typicality_score_oracle(d, 3)) EXPECT_EQ(s, 1.0);
}

TEST(TypicalityOracle, IsolatedMislabelScoresZero) {
    LabeledDataset d;
    d.feature_shape = {1};
    d.class_count = 2;
    for (int i = 0; i < 5; ++i) {
        d.features.push_back({static_cast<double>(i)});
        d.labels.push_back(0);
    }
    d.features.push_back({2.5});
    d.labels.push_back(1);
    const auto s = typicality_score_oracle(d, 3);
    EXPECT_EQ(s[5], 0.0);
}

TEST(TypicalityOracle, MatchesBruteForceAllPairs) {
    LabeledDataset d;
    d.feature_shape = {2};
    d.class_count = 2;
    RandomStream rng(6, "knn");
    for (int i = 0; i < 20; ++i) {
        const std::size_t label = i < 10 ? 0 : 1;
        d.features.push_back({rng.normal() + (label ? 1.0 : -1.0), rng.normal()});
        d.labels.push_back(label);
    }
    const std::size_t k = 4;
    const auto scores = typicality_score_oracle(d, k);
    for (std::size_t i = 0; i < 20; ++i) {
        // brute force: full distance matrix row, sort by (distance, index)
        std::vector<std::pair<double, std::size_t>> row;
        for (std::size_t j = 0; j < 20; ++j) {
            if (j == i) continue;
            const double dx = d.features[i][0] - d.features[j][0];
            const double dy = d.features[i][1] - d.features[j][1];
            row.emplace_back(std::sqrt(dx * dx + dy * dy), j);
        }
        std::sort(row.begin(), row.end());
        int agree = 0;
        for (std::size_t r = 0; r < k; ++r) agree += d.labels[row[r].second] == d.labels[i];
        EXPECT_DOUBLE_EQ(scores[i], agree / static_cast<double>(k)) << "example " << i;
    }
}

TEST(TypicalityOracle, IdenticalFeaturesBreakTiesById) {
    LabeledDataset d;
    d.feature_shape = {1};
    d.class_count = 2;
    for (std::size_t i = 0; i < 6; ++i) {
        d.features.push_back({1.0});
        d.labels.push_back(i < 3 ? 0 : 1);
    }
    const auto s = typicality_score_oracle(d, 2);
    // nearest by id: example 0 -> {1, 2}, example 5 -> {0, 1}
    EXPECT_EQ(s[0], 1.0);
    EXPECT_EQ(s[5], 0.0);
    EXPECT_THROW(typicality_score_oracle(d, 6), ContractError);
}

TEST(GaussianClusters, ZeroSeparationGivesIdenticalClassDistributions) {
    const auto d = generate_gaussian_clusters(3, 4, 2000, 0.0, 5);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> mean(4, 0.0);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.labels[i] == c)
                for (std::size_t f = 0; f < 4; ++f) mean[f] += d.features[i][f] / 2000.0;
        for (double m : mean) EXPECT_NEAR(m, 0.0, 0.1);
    }
}

TEST(GaussianClusters, CentroidsRecoveredAtSeparationThree) {
    const auto d = generate_gaussian_clusters(4, 16, 500, 3.0, 12);
    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> mean(16, 0.0);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.labels[i] == c)
                for (std::size_t f = 0; f < 16; ++f) mean[f] += d.features[i][f] / 500.0;
        const auto centre = gaussian_cluster_center(c, 16, 3.0);
        double dist2 = 0.0;
        for (std::size_t f = 0; f < 16; ++f) dist2 += (mean[f] - centre[f]) * (mean[f] - centre[f]);
        EXPECT_LT(std::sqrt(dist2), 0.2) << "class " << c;
    }
}

TEST(GaussianClusters, DeterministicPerSeed) {
    const auto a = generate_gaussian_clusters(2, 3, 10, 1.0, 9);
    const auto b = generate_gaussian_clusters(2, 3, 10, 1.0, 9);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_THROW(generate_gaussian_clusters(1, 3, 10, 1.0, 9), ContractError);
}
