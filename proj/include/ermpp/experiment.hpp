#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ermpp/config.hpp"
#include "ermpp/data.hpp"

namespace ermpp {

struct RunArtifacts {
    std::vector<std::filesystem::path> csv_files;
    std::filesystem::path markdown;
    std::vector<std::filesystem::path> record_files;
    std::vector<std::filesystem::path> checkpoint_files;
};

/// Dataset per the [dataset] section; generation seed derives from the
/// master seed so swapping samplers or schedules never changes the data.
MultiDomainDataset build_dataset(const ExperimentConfig& cfg);

/// Executes leave_one_domain_out or ablation_grid per the config and writes
/// CSV + Markdown + one JSON record and one deployment checkpoint per run,
/// every artifact stamped with the config digest. Reruns of an identical
/// config are byte-identical except for the wall-clock field in records.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            int workers_override = 0);

/// Trains a backbone on the auxiliary pretext task (seeded random linear
/// teacher over pooled all-domain features, additive input noise as the
/// augmentation-strength stand-in) and writes the checkpoint cmd_run
/// consumes as strong_init.
std::filesystem::path run_pretrain(const ExperimentConfig& cfg,
                                   const std::filesystem::path& out_dir);

}  // namespace ermpp
