// msplab: build stratified datasets, train augmentation variants, and
// analyse MSP-rank separation between atypical and noisy examples.
//
// Exit codes: 0 success, 2 config error, 3 runtime or divergence error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <msplab/pipeline.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
    std::string config;
    std::string out;
    std::string variant;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> traces;
    bool parallel = false;
};

msplab::ExperimentConfig load(const Options& opt) {
    if (opt.config.empty()) throw msplab::ConfigError("--config is required");
    return msplab::load_config(opt.config, opt.seed);
}

std::filesystem::path out_dir(const Options& opt, const msplab::ExperimentConfig& cfg) {
    return opt.out.empty() ? cfg.output_dir : std::filesystem::path(opt.out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msplab - uncertainty-source experiments with targeted augmentation"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* c = cmd->add_option("--config", opt.config, "experiment config file");
        if (needs_config) c->required();
        cmd->add_option("--out", opt.out, "output directory (default: output.dir from the config)");
        cmd->add_option("--seed", opt.seed, "override every seed in the config");
    };

    auto* build = app.add_subcommand("build-dataset", "construct the stratified dataset and write its manifest");
    add_common(build, true);

    auto* train = app.add_subcommand("train", "train one augmentation variant and write its MSP trace");
    add_common(train, true);
    train->add_option("--variant", opt.variant, "none | standard | targeted")
        ->required()
        ->check(CLI::IsMember({"none", "standard", "targeted"}));

    auto* analyze = app.add_subcommand("analyze", "separation reports and box-plot SVGs from traces");
    analyze->add_option("--out", opt.out, "output directory")->required();
    analyze->add_option("traces", opt.traces, "trace CSV files")->required();

    auto* report = app.add_subcommand("report", "build, train every configured variant, and analyse");
    add_common(report, true);
    report->add_flag("--parallel", opt.parallel, "train variants concurrently");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*build) {
            const auto cfg = load(opt);
            msplab::cmd_build_dataset(cfg, out_dir(opt, cfg), std::cout);
        } else if (*train) {
            const auto cfg = load(opt);
            const auto outcome = msplab::cmd_train(cfg, *msplab::parse_regime(opt.variant), out_dir(opt, cfg), std::cout);
            if (outcome.diverged) return kExitRuntime;
        } else if (*analyze) {
            std::vector<std::filesystem::path> paths(opt.traces.begin(), opt.traces.end());
            msplab::cmd_analyze(paths, opt.out, std::cout);
        } else if (*report) {
            const auto cfg = load(opt);
            const auto full = msplab::cmd_report(cfg, out_dir(opt, cfg), std::cout, opt.parallel);
            for (const auto& run : full.runs)
                if (run.diverged) return kExitRuntime;
        }
    } catch (const msplab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
