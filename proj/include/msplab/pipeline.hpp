#pragma once

// End-to-end experiment commands: build-dataset, train, analyze, report.
// Each command reads and writes plain files under an output directory so
// the steps can be run separately from the CLI or chained in-process.

#include <array>
#include <cmath>
#include <filesystem>
#include <future>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "idx.hpp"
#include "io.hpp"
#include "trainer.hpp"

namespace msplab {

namespace fs = std::filesystem;

struct BuiltData {
    StratifiedDataset train;
    std::optional<LabeledDataset> test;
};

inline std::string shape_csv(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

inline Shape parse_shape(const std::string& s) {
    Shape out;
    for (const auto& part : KeyValueConfig::split(s, 'x')) out.push_back(std::stoull(part));
    if (out.empty()) throw FormatError("bad feature shape '" + s + "'");
    return out;
}

/// Source data + stratification, entirely in memory.
inline BuiltData build_data(const ExperimentConfig& cfg) {
    const auto& ds = cfg.dataset;
    LabeledDataset source;
    std::optional<LabeledDataset> test;
    if (ds.source == DataSource::Synthetic) {
        source = generate_gaussian_clusters(ds.class_count, ds.dim, ds.per_class, ds.separation, ds.generator_seed);
        if (ds.test_per_class > 0) {
            test = generate_gaussian_clusters(ds.class_count, ds.dim, ds.test_per_class,
                                              ds.separation, mix_key(ds.generator_seed, fnv1a64("test")));
        }
    } else {
        source = load_idx(ds.images, ds.labels);
        if (!ds.test_images.empty()) {
            test = load_idx(ds.test_images, ds.test_labels);
            test->class_count = std::max(test->class_count, source.class_count);
        }
    }
    if (source.size() == 0) throw ConfigError("source dataset is empty");
    StratifiedDataset train;
    if (ds.recipe == RecipeKind::Frequency) {
        train = build_frequency_noise(source, ds.frequency);
    } else {
        if (ds.knn_k >= source.size()) throw ConfigError("dataset.knn_k must be smaller than the dataset");
        const auto scores = typicality_score_oracle(source, ds.knn_k);
        train = build_score_noise(source, scores, ds.score);
    }
    return {std::move(train), std::move(test)};
}

inline Metadata config_metadata(const ExperimentConfig& cfg) {
    return {{"config_hash", hex64(cfg.hash)}};
}

struct BuildSummary {
    std::size_t typical = 0, atypical = 0, noisy = 0;
    fs::path manifest;
};

inline BuildSummary cmd_build_dataset(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log) {
    const auto data = build_data(cfg);
    fs::create_directories(out_dir);
    const auto& train = data.train;
    BuildSummary summary{train.count(Tag::Typical), train.count(Tag::Atypical), train.count(Tag::Noisy),
                         out_dir / "manifest.csv"};
    Metadata meta = config_metadata(cfg);
    meta.emplace_back("class_count", std::to_string(train.class_count));
    meta.emplace_back("feature_shape", shape_csv(train.feature_shape));
    write_text(summary.manifest, manifest_csv(train, meta));

    std::vector<std::vector<double>> features;
    std::vector<std::size_t> assigned;
    features.reserve(train.size());
    for (const auto& e : train.examples) {
        features.push_back(e.features);
        assigned.push_back(e.assigned_label);
    }
    const Shape flat{shape_numel(train.feature_shape)};
    const Shape& stored = train.feature_shape.size() == 3 && train.feature_shape[0] == 1 ? train.feature_shape : flat;
    write_bytes(out_dir / "features.idx", encode_idx_images_f64(features, stored));
    write_bytes(out_dir / "labels.idx", encode_idx_labels(assigned));
    if (data.test) {
        const Shape test_flat{shape_numel(data.test->feature_shape)};
        const Shape& test_stored =
            data.test->feature_shape.size() == 3 && data.test->feature_shape[0] == 1 ? data.test->feature_shape : test_flat;
        write_bytes(out_dir / "test_features.idx", encode_idx_images_f64(data.test->features, test_stored));
        write_bytes(out_dir / "test_labels.idx", encode_idx_labels(data.test->labels));
    } else {
        fs::remove(out_dir / "test_features.idx");
        fs::remove(out_dir / "test_labels.idx");
    }

    const double n = static_cast<double>(train.size());
    log << "built " << train.size() << " examples: typical " << summary.typical << " ("
        << fixed6(100.0 * static_cast<double>(summary.typical) / n) << "%), atypical " << summary.atypical << " ("
        << fixed6(100.0 * static_cast<double>(summary.atypical) / n) << "%), noisy " << summary.noisy << " ("
        << fixed6(100.0 * static_cast<double>(summary.noisy) / n) << "%)\n";
    return summary;
}

struct LoadedData {
    BuiltData data;
    std::uint64_t manifest_hash = 0;
};

/// Reads what cmd_build_dataset wrote, refusing files built from another config.
inline LoadedData load_built_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const auto manifest_path = out_dir / "manifest.csv";
    if (!fs::exists(manifest_path)) {
        throw ConfigError("no dataset in " + out_dir.string() + "; run build-dataset first");
    }
    const std::string text = read_text(manifest_path);
    const auto doc = parse_csv(text, kManifestHeader, manifest_path.string());
    if (doc.meta_value("config_hash") != hex64(cfg.hash)) {
        throw ConfigError(manifest_path.string() + " was built from a different config (hash " +
                          doc.meta_value("config_hash") + ", expected " + hex64(cfg.hash) + ")");
    }
    const auto rows = parse_manifest(doc, manifest_path.string());
    const auto stored = load_idx(out_dir / "features.idx", out_dir / "labels.idx");
    if (stored.size() != rows.size()) throw FormatError("feature file and manifest disagree on example count");

    LoadedData loaded;
    loaded.manifest_hash = fnv1a64(text);
    auto& train = loaded.data.train;
    train.class_count = parse_index(doc.meta_value("class_count"), manifest_path.string());
    train.feature_shape = parse_shape(doc.meta_value("feature_shape"));
    if (cfg.dataset.recipe == RecipeKind::Frequency) train.recipe = cfg.dataset.frequency;
    else train.recipe = cfg.dataset.score;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (stored.labels[i] != rows[i].assigned_label) throw FormatError("labels.idx disagrees with manifest");
        Example e;
        e.id = rows[i].id;
        e.source_index = rows[i].source_index;
        e.features = stored.features[i];
        e.original_label = rows[i].original_label;
        e.assigned_label = rows[i].assigned_label;
        e.tag = rows[i].tag;
        if (e.features.size() != shape_numel(train.feature_shape)) throw FormatError("feature width mismatch");
        train.examples.push_back(std::move(e));
    }
    if (fs::exists(out_dir / "test_features.idx")) {
        auto test = load_idx(out_dir / "test_features.idx", out_dir / "test_labels.idx");
        test.feature_shape = train.feature_shape;
        test.class_count = train.class_count;
        loaded.data.test = std::move(test);
    }
    return loaded;
}

struct TrainOutcome {
    bool diverged = false;
    int epochs_completed = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> test_accuracy;
    fs::path trace;
    std::string message;
};

inline std::string policy_text(const AugmentationPolicy& p) {
    std::string transforms;
    for (std::size_t i = 0; i < p.transforms.size(); ++i) transforms += (i ? "," : "") + describe(p.transforms[i]);
    return "regime=" + regime_name(p.regime) + " warmup_epochs=" + std::to_string(p.warmup_epochs) +
           " target_fraction=" + fixed6(p.target_fraction) + " transforms=" + transforms;
}

inline std::string schedule_text(const TrainingSchedule& s) {
    std::string decays;
    for (std::size_t i = 0; i < s.decay_epochs.size(); ++i) decays += (i ? "," : "") + std::to_string(s.decay_epochs[i]);
    return "epochs=" + std::to_string(s.epochs) + " base_lr=" + fixed6(s.base_lr) + " decay_factor=" +
           fixed6(s.decay_factor) + " decay_epochs=" + decays + " batch_size=" + std::to_string(s.batch_size) +
           " momentum=" + fixed6(s.momentum) + " weight_decay=" + fixed6(s.weight_decay) + " init=he_normal";
}

inline std::string model_text(const Model& model) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& p : model.parameters()) {
        out << p.name << ' ' << shape_csv(p.value.shape());
        for (double v : p.value.data()) out << ' ' << v;
        out << '\n';
    }
    return out.str();
}

/// Trains one variant on the built dataset and writes trace_<variant>.csv,
/// model_<variant>.txt and summary_<variant>.csv. On divergence the partial
/// trace is kept and flagged.
inline TrainOutcome cmd_train(const ExperimentConfig& cfg, Regime regime, const fs::path& out_dir, std::ostream& log) {
    const auto& policy = cfg.variant(regime);
    const auto loaded = load_built_data(cfg, out_dir);
    const auto& train_set = loaded.data.train;
    ModelSpec spec = cfg.model;
    spec.input_shape = train_set.feature_shape;
    spec.class_count = train_set.class_count;

    const std::string variant = regime_name(regime);
    Metadata meta = config_metadata(cfg);
    meta.emplace_back("manifest_hash", hex64(loaded.manifest_hash));
    meta.emplace_back("variant", variant);
    meta.emplace_back("seeds", "generator=" + std::to_string(cfg.dataset.generator_seed) + " dataset=" +
                                   std::to_string(cfg.raw.get_u64("dataset.seed", 0)) +
                                   " init=" + std::to_string(spec.init_seed) + " training=" + std::to_string(cfg.training.seed));
    meta.emplace_back("schedule", schedule_text(cfg.training));
    meta.emplace_back("policy", policy_text(policy));
    meta.emplace_back("model", describe(spec));

    TrainOutcome outcome;
    outcome.trace = out_dir / ("trace_" + variant + ".csv");
    MspTracker tracker(train_set.tags());
    std::optional<TrainedModel> trained;
    Metadata footer;
    try {
        trained = train(train_set, spec, cfg.training, policy, tracker, [&](const EpochStats& s) {
            log << variant << " epoch " << s.epoch << " lr " << fixed6(s.learning_rate) << " loss " << fixed6(s.mean_loss)
                << " augmented " << s.augmented << "\n";
        });
        footer.emplace_back("status", "ok");
    } catch (const TrainingError& err) {
        outcome.diverged = true;
        outcome.message = err.what();
        footer.emplace_back("status", "diverged epoch=" + std::to_string(err.epoch()) + " batch=" +
                                          std::to_string(err.batch()));
    }
    outcome.epochs_completed = static_cast<int>(tracker.epochs());
    write_text(outcome.trace, trace_csv(tracker, meta, footer));

    std::string summary = metadata_block(config_metadata(cfg)) + "variant,epochs_completed,final_loss,test_accuracy,status\n";
    if (trained) {
        outcome.final_loss = trained->final_loss;
        if (loaded.data.test) outcome.test_accuracy = evaluate(*trained, *loaded.data.test);
        write_text(out_dir / ("model_" + variant + ".txt"), model_text(trained->model));
    }
    summary += variant + "," + std::to_string(outcome.epochs_completed) + "," +
               (trained ? fixed6(outcome.final_loss) : std::string("nan")) + "," +
               (outcome.test_accuracy ? fixed6(*outcome.test_accuracy) : std::string("na")) + "," +
               (outcome.diverged ? "diverged" : "ok") + "\n";
    write_text(out_dir / ("summary_" + variant + ".csv"), summary);

    if (outcome.diverged) {
        log << variant << ": " << outcome.message << " (partial trace kept in " << outcome.trace.string() << ")\n";
    } else {
        log << variant << ": final loss " << fixed6(outcome.final_loss) << ", test accuracy "
            << (outcome.test_accuracy ? fixed6(*outcome.test_accuracy) : std::string("n/a")) << "\n";
    }
    return outcome;
}

struct VariantReport {
    std::string variant;
    SeparationReport report;
};

/// Separation reports for one or more traces of the same dataset. Writes
/// report_<variant>.csv, boxplot_<variant>.svg and comparison.csv.
inline std::vector<VariantReport> cmd_analyze(const std::vector<fs::path>& traces, const fs::path& out_dir,
                                              std::ostream& log) {
    if (traces.empty()) throw ContractError("analyze needs at least one trace");
    std::vector<VariantReport> out;
    std::string config_hash, manifest_hash;
    std::vector<std::pair<std::string, SeparationReport>> all;
    std::vector<LoadedTrace> loaded;
    for (const auto& path : traces) {
        const auto& trace = loaded.emplace_back(load_trace(path));
        const auto ch = trace.meta.count("config_hash") ? trace.meta.at("config_hash") : "";
        const auto mh = trace.meta.count("manifest_hash") ? trace.meta.at("manifest_hash") : "";
        if (out.empty()) {
            config_hash = ch;
            manifest_hash = mh;
        } else if (ch != config_hash || mh != manifest_hash) {
            throw ContractError("trace " + path.string() + " comes from a different config or dataset manifest");
        }
        if (trace.ranks.empty()) throw ContractError("trace " + path.string() + " has no epochs");
        std::string variant = trace.meta.count("variant") ? trace.meta.at("variant") : path.stem().string();
        for (const auto& other : out)
            if (other.variant == variant) throw ContractError("variant " + variant + " given twice");
        out.push_back({variant, separation_report(trace.ranks, trace.tags)});
        all.emplace_back(variant, out.back().report);
    }
    fs::create_directories(out_dir);
    const Metadata meta{{"config_hash", config_hash}, {"manifest_hash", manifest_hash}};
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = out[i];
        const auto& trace = loaded[i];
        Metadata m = meta;
        m.emplace_back("variant", v.variant);
        write_text(out_dir / ("report_" + v.variant + ".csv"), report_csv(v.report, m));
        write_text(out_dir / ("boxplot_" + v.variant + ".svg"), boxplot_svg(v.variant, trace.ranks, trace.tags));
        const auto& last = v.report.final_epoch();
        log << v.variant << ": final epoch " << last.epoch << " auroc " << fixed6(last.auroc) << " iqr_overlap "
            << fixed6(last.iqr_overlap) << "\n";
    }
    write_text(out_dir / "comparison.csv", comparison_csv(all, meta));
    return out;
}

struct FullReport {
    BuildSummary build;
    std::vector<TrainOutcome> runs;
    std::vector<VariantReport> reports;
};

/// build-dataset, train every configured variant, analyze, and write accuracy.csv.
inline FullReport cmd_report(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log,
                             bool parallel = false) {
    FullReport full;
    full.build = cmd_build_dataset(cfg, out_dir, log);
    if (parallel) {
        std::vector<std::future<std::pair<TrainOutcome, std::string>>> jobs;
        for (const auto& v : cfg.variants) {
            jobs.push_back(std::async(std::launch::async, [&cfg, &out_dir, regime = v.regime] {
                std::ostringstream buf;
                auto outcome = cmd_train(cfg, regime, out_dir, buf);
                return std::make_pair(std::move(outcome), buf.str());
            }));
        }
        for (auto& job : jobs) {
            auto [outcome, text] = job.get();
            log << text;
            full.runs.push_back(std::move(outcome));
        }
    } else {
        for (const auto& v : cfg.variants) full.runs.push_back(cmd_train(cfg, v.regime, out_dir, log));
    }
    std::vector<fs::path> traces;
    for (const auto& r : full.runs) traces.push_back(r.trace);
    full.reports = cmd_analyze(traces, out_dir, log);

    std::string acc = metadata_block(config_metadata(cfg)) + "variant,test_accuracy,final_auroc,final_iqr_overlap,status\n";
    for (std::size_t i = 0; i < full.runs.size(); ++i) {
        const auto& run = full.runs[i];
        const auto& last = full.reports[i].report.final_epoch();
        acc += full.reports[i].variant + "," + (run.test_accuracy ? fixed6(*run.test_accuracy) : std::string("na")) +
               "," + fixed6(last.auroc) + "," + fixed6(last.iqr_overlap) + "," + (run.diverged ? "diverged" : "ok") + "\n";
    }
    write_text(out_dir / "accuracy.csv", acc);
    return full;
}

} // namespace msplab
