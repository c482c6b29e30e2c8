#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ftnn/error.hpp"
#include "ftnn/experiment.hpp"
#include "ftnn/fetch.hpp"
#include "ftnn/mnist.hpp"
#include "ftnn/trainer.hpp"

namespace {

int cmd_run(const std::string& config_path) {
    ftnn::ExperimentConfig cfg;
    try {
        cfg = ftnn::load_experiment_config(config_path);
    } catch (const ftnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ftnn::IoError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        const ftnn::ExperimentResult result = ftnn::run_experiment(cfg);
        std::cout << "run complete: mode=" << cfg.mode << " val_accuracy=" << result.final_val_accuracy;
        if (result.final_test_accuracy >= 0.0) std::cout << " test_accuracy=" << result.final_test_accuracy;
        std::cout << "\nartifacts: " << result.metrics_path << ", " << result.model_path << ", "
                  << result.config_echo_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 1;
    }
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b, const std::string& report_path) {
    try {
        const ftnn::ComparisonReport report = ftnn::compare_run_dirs(dir_a, dir_b, report_path);
        std::cout << ftnn::comparison_summary_text(report);
        std::cout << "report: " << report_path << "\n";
        return 0;
    } catch (const ftnn::IoError& e) {
        std::cerr << "compare error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "compare failed: " << e.what() << "\n";
        return 1;
    }
}

int cmd_gradcheck(const std::string& preset, std::uint64_t seed, std::size_t seeds, bool corrupt) {
    constexpr double kThreshold = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < seeds; ++k) {
        const std::uint64_t s = seed + k;
        const double corrupt_delta = corrupt ? 1e-3 : 0.0;
        double err = 0.0;
        if (preset == "dense") {
            err = ftnn::grad_check_dense_preset(s, corrupt_delta);
        } else if (preset == "conv") {
            err = ftnn::grad_check_conv_preset(s, corrupt_delta);
        } else {
            std::cerr << "unknown preset '" << preset << "' (expected dense|conv)\n";
            return 2;
        }
        std::printf("gradcheck %s seed=%llu max_rel_error=%.3e\n", preset.c_str(),
                    static_cast<unsigned long long>(s), err);
        worst = std::max(worst, err);
    }
    std::printf("gradcheck %s worst=%.3e threshold=%.0e => %s\n", preset.c_str(), worst, kThreshold,
                worst <= kThreshold ? "ok" : "FAIL");
    return worst <= kThreshold ? 0 : 1;
}

int cmd_inspect(const std::vector<std::string>& paths) {
    int status = 0;
    for (const std::string& path : paths) {
        try {
            const ftnn::IdxInfo info = ftnn::inspect_idx(path);
            std::printf("%s: magic=0x%08X dims=[", path.c_str(), info.magic);
            for (std::size_t i = 0; i < info.dims.size(); ++i) {
                std::printf("%s%u", i ? ", " : "", info.dims[i]);
            }
            std::printf("]\n");
        } catch (const std::exception& e) {
            std::cerr << path << ": " << e.what() << "\n";
            status = 1;
        }
    }
    return status;
}

int cmd_fetch(const std::string& dir, const std::string& base_url) {
    try {
        ftnn::fetch_mnist(dir, base_url);
        std::cout << "MNIST files ready under " << dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "fetch failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"greedy layer-wise (forward thinking) network training experiments"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "JSON experiment config")->required();

    std::string dir_a, dir_b, report_path = "report.csv";
    auto* compare = app.add_subcommand("compare", "compare two run directories");
    compare->add_option("dir_a", dir_a)->required();
    compare->add_option("dir_b", dir_b)->required();
    compare->add_option("-o,--out", report_path, "report csv path");

    std::string preset = "dense";
    std::uint64_t seed = 0;
    std::size_t seeds = 1;
    bool corrupt = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--preset", preset, "dense|conv");
    gradcheck->add_option("--seed", seed, "first seed");
    gradcheck->add_option("--seeds", seeds, "number of consecutive seeds");
    gradcheck->add_flag("--corrupt", corrupt, "debug: corrupt the analytic gradient (must fail)");

    std::vector<std::string> inspect_paths;
    auto* inspect = app.add_subcommand("inspect-data", "print IDX file headers");
    inspect->add_option("paths", inspect_paths, "IDX files")->required();

    std::string fetch_dir;
    std::string base_url;
    auto* fetch = app.add_subcommand("fetch-mnist", "download the four MNIST IDX files (network)");
    fetch->add_option("dir", fetch_dir, "target directory")->required();
    fetch->add_option("--base-url", base_url, "mirror base url (default: known mirrors)");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(config_path);
    if (compare->parsed()) return cmd_compare(dir_a, dir_b, report_path);
    if (gradcheck->parsed()) return cmd_gradcheck(preset, seed, seeds, corrupt);
    if (inspect->parsed()) return cmd_inspect(inspect_paths);
    if (fetch->parsed()) return cmd_fetch(fetch_dir, base_url);
    return 2;
}
