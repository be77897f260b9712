#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ermpp/optim.hpp"
#include "ermpp/pipeline.hpp"

namespace ermpp {

/// Everything a run needs, parsed from a flat key-value config with typed
/// sections. Unknown sections and keys are rejected with file:line anchors;
/// the canonical serialization (and its digest) is echoed into every
/// artifact a run emits.
struct ExperimentConfig {
    // [dataset]
    std::string family = "rotated_blobs";  // rotated_blobs | spurious_blobs | import
    int num_domains = 5;
    int num_classes = 3;
    int n_per_domain = 500;
    double rotation_step_deg = 12.0;
    double noise_sigma = 0.35;
    std::vector<double> spurious_corr;
    std::string dataset_path;

    // [model]
    std::vector<int> hidden_dims = {16, 16};
    bool use_batchnorm = true;

    // [optim]
    AdamConfig adam;

    // [schedule]
    TrainSchedule schedule;

    // [toggles]
    ComponentToggles toggles;

    // [run]
    uint64_t seed = 0;
    bool seed_present = false;
    int num_seeds = 3;
    std::string mode = "leave_one_out";  // leave_one_out | ablation
    int workers = 1;
    double val_fraction = 0.2;
    int per_domain_batch = 8;
    int total_batch = 32;
    std::string strong_init_path;

    // [ablation]
    std::vector<ComponentToggles> ablation_rows;

    // [pretrain]
    struct Pretrain {
        int steps = 1000;
        double lr = 0.01;
        double noise = 0.5;
        int aux_classes = 4;
        int batch_size = 32;
        std::string out = "pretrained.ckpt";
    } pretrain;

    /// Normalized round-trippable text; digest source and report echo.
    std::string canonical_text() const;
    std::string digest() const;

    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

/// "mpa,ws,ubn" or "none", plus optional "sampler=resampled" entry.
ComponentToggles parse_toggle_row(const std::string& row, const std::string& anchor);

}  // namespace ermpp
