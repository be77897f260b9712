#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ermpp/averaging.hpp"
#include "ermpp/data.hpp"
#include "ermpp/nn.hpp"
#include "ermpp/optim.hpp"

namespace ermpp {

enum class SamplerKind { Balanced, Resampled };

struct TrainSchedule {
    int total_steps = 3000;
    int warmstart_steps = 500;
    /// -1 derives the default: warmstart_steps + 100 with warmstart on,
    /// 100 without.
    int mpa_burn_in = -1;
    int val_every = 100;
    double long_train_multiplier = 4.0;
    std::optional<int> early_stop_step;  // phi, set by the first pass
};

struct ComponentToggles {
    bool mpa = false;
    bool fd = false;
    bool lt = false;
    bool ws = false;
    bool es = false;
    bool strong_init = false;
    bool ubn = false;
    SamplerKind sampler = SamplerKind::Balanced;

    std::string label() const;
};

/// Schedule with the toggles applied: LT multiplies the step budget, a
/// disabled warmstart zeroes the head-only phase, and the burn-in default is
/// filled in. ConfigError when the burn-in invariant
/// (mpa_burn_in >= warmstart_steps + 100 while warmstart is enabled) fails.
struct ResolvedSchedule {
    int total_steps = 0;
    int warmstart_steps = 0;
    int mpa_burn_in = 0;
    int val_every = 0;
};

ResolvedSchedule resolve_schedule(const TrainSchedule& schedule, const ComponentToggles& toggles);

struct ValidationPoint {
    int step = 0;
    double accuracy = 0.0;
};

/// Step of the highest validation accuracy; ties break to the earliest step.
/// ConfigError when the curve is empty (schedule shorter than val_every).
int select_training_length(const std::vector<ValidationPoint>& curve);

/// Test seam: runs after the optimizer step and before the iterate is
/// contributed to the running average.
struct TrainHooks {
    std::function<void(int step, Model& model, Adam& adam)> after_step;
};

struct TrainResult {
    ModelState deployment;     // averaged state when mpa is on, else the final iterate
    ModelState final_iterate;
    ModelState init_state;
    std::vector<ValidationPoint> val_curve;
    int steps_executed = 0;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
};

/// The ERM++ training loop. Head-only updates through the warmstart phase,
/// then full updates; from the burn-in step onward each iterate feeds the
/// running average (mpa) and the averaged model's BN stats are refreshed
/// from the current batch (ubn). Validation accuracy is measured every
/// val_every steps with the same evaluation model a deployment would use.
TrainResult train_ermpp(Model& model, BatchIterator& data, const PooledData* val,
                        const ResolvedSchedule& sched, const ComponentToggles& toggles,
                        const AdamConfig& adam_cfg, const TrainHooks& hooks = {});

struct RunRecord {
    ComponentToggles toggles;
    TrainSchedule schedule;
    ResolvedSchedule resolved;
    uint64_t master_seed = 0;
    int trial = 0;
    uint64_t trial_seed = 0;
    std::string held_out_domain;
    std::vector<ValidationPoint> val_curve;
    int phi = -1;  // -1 when early stopping is off
    double held_out_accuracy = 0.0;
    double l2_from_init = 0.0;
    double wall_clock_sec = 0.0;  // excluded from every determinism surface
    std::string checkpoint_digest;
    int steps_executed = 0;
    std::map<std::string, int> pool_sizes;  // per-domain deployment-training pool
    std::string config_digest;
    std::string generator_spec;
    ModelState deployment;
};

struct ProtocolConfig {
    ModelSpec model_spec;  // input_dim / num_classes filled from the dataset
    TrainSchedule schedule;
    ComponentToggles toggles;
    AdamConfig adam;
    double val_fraction = 0.2;
    int per_domain_batch = 8;
    int total_batch = 32;  // resampled sampler
    std::optional<ModelState> strong_init;
    /// Verification hook: stands in for the measured pass-1 curve so the
    /// phi-selection and pass-2 contracts can be driven directly.
    std::optional<std::vector<ValidationPoint>> val_curve_override;
};

/// Two training passes: pass 1 on the train split picks phi from the
/// validation curve; pass 2 restarts from the identical initialization on
/// train+val (fd) or train alone and runs exactly phi steps. Pass 2 draws
/// its batches from a distinct RNG stream. ContractError unless es is on.
RunRecord two_pass_protocol(const MultiDomainDataset& ds, const std::string& held_out,
                            const ProtocolConfig& cfg, uint64_t master_seed, int trial);

/// Dispatches on es: two-pass when on, a single pass otherwise (full data
/// for the nominal budget when fd is on).
RunRecord run_protocol(const MultiDomainDataset& ds, const std::string& held_out,
                       const ProtocolConfig& cfg, uint64_t master_seed, int trial);

struct EvalReport {
    std::string label;
    std::vector<std::string> held_out_domains;
    std::vector<std::vector<double>> accuracies;  // [domain][trial]
    std::vector<double> domain_mean;
    std::vector<double> domain_stderr;  // sample std over trials / sqrt(trials)
    double average = 0.0;               // arithmetic mean of the domain means
    int num_trials = 0;
    std::vector<RunRecord> records;
};

/// Every domain takes a turn as the held-out target, each trial re-runs the
/// protocol with a derived seed; runs are independent and execute on up to
/// `workers` threads.
EvalReport leave_one_domain_out(const MultiDomainDataset& ds, const ProtocolConfig& cfg,
                                uint64_t master_seed, int num_trials, int workers = 1);

/// One report per toggle set, same schedule and seeds throughout.
std::vector<EvalReport> ablation_grid(const MultiDomainDataset& ds, const ProtocolConfig& base,
                                      const std::vector<ComponentToggles>& toggle_sets,
                                      uint64_t master_seed, int num_trials, int workers = 1);

}  // namespace ermpp
