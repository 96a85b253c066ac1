#pragma once

// Experiment configuration: a flat, sectioned key = value text file.
//
//   [dataset]
//   source = synthetic
//   per_class = 500
//   ...
//
// '#' and ';' start comments. Keys are addressed as "section.key".

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "augmentation.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "trainer.hpp"

namespace msplab {

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& origin = "<config>") {
        KeyValueConfig cfg;
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            }
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            if (cfg.values_.count(full)) throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key " + full);
            cfg.values_[full] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    static KeyValueConfig parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path.string());
        return parse(in, path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key " + key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return to_double(key, values_.at(key));
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        return to_u64(key, values_.at(key));
    }

    std::vector<std::uint64_t> get_u64_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
        if (!has(key)) return fallback;
        std::vector<std::uint64_t> out;
        for (const auto& item : split(values_.at(key), ',')) out.push_back(to_u64(key, item));
        return out;
    }

    /// FNV-1a over "key=value\n" lines in key order, skipping `exclude` keys.
    std::uint64_t hash(const std::vector<std::string>& exclude = {}) const {
        std::string canonical;
        for (const auto& [k, v] : values_) {
            if (std::find(exclude.begin(), exclude.end(), k) != exclude.end()) continue;
            canonical += k + "=" + v + "\n";
        }
        return fnv1a64(canonical);
    }

    static std::vector<std::string> split(const std::string& s, char sep) {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(s);
        while (std::getline(in, item, sep)) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    static double to_double(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
        }
    }

    static std::uint64_t to_u64(const std::string& key, const std::string& v) {
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
        }
        return out;
    }

    std::map<std::string, std::string> values_;
};

enum class DataSource { Synthetic, Idx };
enum class RecipeKind { Frequency, Score };

struct DatasetSection {
    DataSource source = DataSource::Synthetic;
    // synthetic
    std::size_t class_count = 4;
    std::size_t dim = 16;
    std::size_t per_class = 500;
    std::size_t test_per_class = 250;
    double separation = 3.0;
    std::uint64_t generator_seed = 1;
    // idx
    std::filesystem::path images, labels, test_images, test_labels;
    // stratification
    RecipeKind recipe = RecipeKind::Frequency;
    FrequencyNoiseConfig frequency;
    ScoreNoiseConfig score;
    std::size_t knn_k = 10;
};

struct ExperimentConfig {
    DatasetSection dataset;
    ModelSpec model;  // input_shape / class_count are filled from the data
    TrainingSchedule training;
    std::vector<AugmentationPolicy> variants;
    std::filesystem::path output_dir = "out";
    std::uint64_t hash = 0;
    KeyValueConfig raw;

    const AugmentationPolicy& variant(Regime regime) const {
        for (const auto& v : variants)
            if (v.regime == regime) return v;
        throw ConfigError("variant " + regime_name(regime) + " is not configured");
    }
};

inline std::optional<Regime> parse_regime(const std::string& s) {
    if (s == "none") return Regime::NoAugmentation;
    if (s == "standard") return Regime::Standard;
    if (s == "targeted") return Regime::Targeted;
    return std::nullopt;
}

/// "jitter:0.1", "flip:0.5", "crop:4", comma separated.
inline std::vector<Transform> parse_transforms(const std::string& text) {
    std::vector<Transform> out;
    for (const auto& item : KeyValueConfig::split(text, ',')) {
        const auto colon = item.find(':');
        const std::string kind = item.substr(0, colon);
        const std::string arg = colon == std::string::npos ? "" : item.substr(colon + 1);
        try {
            if (kind == "flip") {
                out.push_back(HorizontalFlip{arg.empty() ? 0.5 : std::stod(arg)});
            } else if (kind == "crop") {
                const long pad = arg.empty() ? 4 : std::stol(arg);
                if (pad < 0) throw ConfigError("crop padding must be >= 0");
                out.push_back(RandomCrop{static_cast<std::size_t>(pad)});
            } else if (kind == "jitter") {
                out.push_back(GaussianJitter{arg.empty() ? 0.1 : std::stod(arg)});
            } else {
                throw ConfigError("unknown transform '" + kind + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad transform argument in '" + item + "'");
        }
    }
    return out;
}

inline const std::vector<std::string>& seed_keys() {
    static const std::vector<std::string> keys{"dataset.generator_seed", "dataset.seed", "model.init_seed",
                                               "training.seed"};
    return keys;
}

/// Validates and resolves a parsed file. `seed_override` replaces every seed key.
inline ExperimentConfig resolve_config(KeyValueConfig raw, const std::filesystem::path& base_dir = {},
                                       std::optional<std::uint64_t> seed_override = std::nullopt) {
    if (seed_override) {
        for (const auto& key : seed_keys()) raw.set(key, std::to_string(*seed_override));
    }
    for (const auto& key : seed_keys()) {
        if (!raw.has(key)) throw ConfigError("seed must be explicit: missing " + key);
    }
    ExperimentConfig cfg;
    auto& ds = cfg.dataset;
    const std::string source = raw.get("dataset.source", "synthetic");
    if (source == "synthetic") {
        ds.source = DataSource::Synthetic;
        ds.class_count = raw.get_u64("dataset.class_count", 4);
        ds.dim = raw.get_u64("dataset.dim", 16);
        ds.per_class = raw.get_u64("dataset.per_class", 500);
        ds.test_per_class = raw.get_u64("dataset.test_per_class", 250);
        ds.separation = raw.get_double("dataset.separation", 3.0);
        ds.generator_seed = raw.get_u64("dataset.generator_seed", 0);
        if (ds.class_count < 2 || ds.dim < 2 || ds.per_class < 10) {
            throw ConfigError("synthetic data needs class_count >= 2, dim >= 2, per_class >= 10");
        }
        if (ds.class_count > 2 * ds.dim) throw ConfigError("synthetic data supports at most 2*dim classes");
        if (ds.test_per_class != 0 && ds.test_per_class < 10) {
            throw ConfigError("dataset.test_per_class must be 0 (no test set) or >= 10");
        }
    } else if (source == "idx") {
        ds.source = DataSource::Idx;
        auto path_of = [&](const std::string& key, bool required) -> std::filesystem::path {
            if (!raw.has(key)) {
                if (required) throw ConfigError("missing config key " + key);
                return {};
            }
            std::filesystem::path p = raw.get(key, "");
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            if (!std::filesystem::exists(p)) throw ConfigError(key + ": file not found: " + p.string());
            return p;
        };
        ds.images = path_of("dataset.images", true);
        ds.labels = path_of("dataset.labels", true);
        ds.test_images = path_of("dataset.test_images", false);
        ds.test_labels = path_of("dataset.test_labels", false);
        if (ds.test_images.empty() != ds.test_labels.empty()) {
            throw ConfigError("dataset.test_images and dataset.test_labels go together");
        }
    } else {
        throw ConfigError("dataset.source must be synthetic or idx, got '" + source + "'");
    }

    const std::string noise = raw.get("dataset.label_noise", "permute");
    LabelNoise label_noise;
    if (noise == "permute") label_noise = LabelNoise::Permute;
    else if (noise == "uniform") label_noise = LabelNoise::Uniform;
    else throw ConfigError("dataset.label_noise must be permute or uniform");

    const std::string recipe = raw.get("dataset.recipe", "frequency");
    const std::uint64_t recipe_seed = raw.get_u64("dataset.seed", 0);
    if (recipe == "frequency") {
        ds.recipe = RecipeKind::Frequency;
        ds.frequency.atypical_fraction = raw.get_double("dataset.atypical_fraction", 0.2);
        ds.frequency.noisy_fraction = raw.get_double("dataset.noisy_fraction", 0.2);
        ds.frequency.duplicated_fraction = raw.get_double("dataset.duplicated_fraction", 0.3);
        ds.frequency.copies = raw.get_u64("dataset.copies", 2);
        ds.frequency.seed = recipe_seed;
        ds.frequency.label_noise = label_noise;
        const auto& f = ds.frequency;
        for (double x : {f.atypical_fraction, f.noisy_fraction, f.duplicated_fraction}) {
            if (!(x >= 0.0 && x < 1.0)) throw ConfigError("recipe fractions must lie in [0, 1)");
        }
        if (f.copies < 2) throw ConfigError("dataset.copies must be >= 2");
        if (std::abs(f.atypical_fraction + f.noisy_fraction + f.duplicated_fraction * static_cast<double>(f.copies) - 1.0) > 1e-9) {
            throw ConfigError("atypical_fraction + noisy_fraction + duplicated_fraction * copies must equal 1");
        }
    } else if (recipe == "score") {
        ds.recipe = RecipeKind::Score;
        ds.score.atypical_fraction = raw.get_double("dataset.atypical_fraction", 0.2);
        ds.score.noisy_fraction = raw.get_double("dataset.noisy_fraction", 0.2);
        ds.score.seed = recipe_seed;
        ds.score.label_noise = label_noise;
        ds.knn_k = raw.get_u64("dataset.knn_k", 10);
        const auto& s = ds.score;
        for (double x : {s.atypical_fraction, s.noisy_fraction}) {
            if (!(x >= 0.0 && x < 1.0)) throw ConfigError("recipe fractions must lie in [0, 1)");
        }
        if (s.atypical_fraction + s.noisy_fraction >= 1.0) throw ConfigError("atypical + noisy fractions must be < 1");
        if (ds.knn_k < 1) throw ConfigError("dataset.knn_k must be >= 1");
    } else {
        throw ConfigError("dataset.recipe must be frequency or score, got '" + recipe + "'");
    }

    const std::string arch = raw.get("model.architecture", "mlp");
    if (arch == "mlp") {
        MlpArch mlp;
        for (auto w : raw.get_u64_list("model.hidden", {64, 64})) {
            if (w == 0) throw ConfigError("model.hidden widths must be positive");
            mlp.hidden.push_back(w);
        }
        cfg.model.architecture = mlp;
    } else if (arch == "cnn") {
        SmallCnnArch cnn;
        cnn.conv_channels = raw.get_u64("model.conv_channels", 8);
        cnn.dense_width = raw.get_u64("model.dense_width", 32);
        if (cnn.conv_channels == 0 || cnn.dense_width == 0) throw ConfigError("cnn widths must be positive");
        cfg.model.architecture = cnn;
    } else {
        throw ConfigError("model.architecture must be mlp or cnn, got '" + arch + "'");
    }
    cfg.model.init_seed = raw.get_u64("model.init_seed", 0);

    auto& tr = cfg.training;
    tr.epochs = static_cast<int>(raw.get_u64("training.epochs", 30));
    tr.base_lr = raw.get_double("training.base_lr", 0.1);
    tr.decay_factor = raw.get_double("training.decay_factor", 0.2);
    tr.decay_epochs.clear();
    for (auto e : raw.get_u64_list("training.decay_epochs", {10, 20})) tr.decay_epochs.push_back(static_cast<int>(e));
    tr.batch_size = raw.get_u64("training.batch_size", 128);
    tr.seed = raw.get_u64("training.seed", 0);
    tr.momentum = raw.get_double("training.momentum", 0.0);
    tr.weight_decay = raw.get_double("training.weight_decay", 0.0);
    validate(tr);

    const auto transforms = parse_transforms(raw.get("augmentation.transforms", "jitter:0.1"));
    const auto warmup = static_cast<int>(raw.get_u64("augmentation.warmup_epochs", 3));
    const double fraction = raw.get_double("augmentation.target_fraction", 0.2);
    for (const auto& name : KeyValueConfig::split(raw.get("augmentation.variants", "none,standard,targeted"), ',')) {
        const auto regime = parse_regime(name);
        if (!regime) throw ConfigError("unknown augmentation variant '" + name + "'");
        AugmentationPolicy policy{*regime, warmup, fraction, transforms};
        validate(policy);
        cfg.variants.push_back(std::move(policy));
    }
    if (cfg.variants.empty()) throw ConfigError("augmentation.variants is empty");

    cfg.output_dir = raw.get("output.dir", "out");
    cfg.hash = raw.hash({"output.dir"});
    cfg.raw = std::move(raw);
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt) {
    return resolve_config(KeyValueConfig::load(path), path.parent_path(), seed_override);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

} // namespace msplab
