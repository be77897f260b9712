#include <cstdlib>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "ermpp/config.hpp"
#include "ermpp/experiment.hpp"
#include "ermpp/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

bool deterministic_mode() {
    const char* v = std::getenv("ERMPP_DETERMINISTIC");
    return v == nullptr || std::string(v) != "0";
}

ermpp::ExperimentConfig load_config(const std::string& path) {
    ermpp::ExperimentConfig cfg = ermpp::parse_config_file(path);
    if (!cfg.seed_present) {
        if (deterministic_mode()) {
            throw ermpp::ConfigError(path +
                                     ": missing run.seed (required while ERMPP_DETERMINISTIC=1)");
        }
        cfg.seed = std::random_device{}();
        cfg.seed_present = true;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ERM++ domain-generalization training laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    int workers = 0;

    auto* run = app.add_subcommand("run", "execute the experiment described by a config file");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--workers", workers, "parallel run workers (overrides the config)");

    auto* verify = app.add_subcommand("verify", "run the built-in oracle suites");

    auto* pretrain = app.add_subcommand("pretrain", "train a strong-init backbone checkpoint");
    pretrain->add_option("config", config_path, "config file")->required();
    pretrain->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const auto cfg = load_config(config_path);
            const auto artifacts = ermpp::run_experiment(cfg, out_dir, workers);
            std::cout << "wrote " << artifacts.markdown.string();
            for (const auto& p : artifacts.csv_files) std::cout << " " << p.string();
            std::cout << " and " << artifacts.record_files.size() << " run records\n";
            return kExitOk;
        }
        if (verify->parsed()) {
            return ermpp::run_verify(std::cout) ? kExitOk : kExitRuntime;
        }
        if (pretrain->parsed()) {
            const auto cfg = load_config(config_path);
            const auto path = ermpp::run_pretrain(cfg, out_dir);
            std::cout << "wrote " << path.string() << "\n";
            return kExitOk;
        }
    } catch (const ermpp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
