#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ermpp/data.hpp"
#include "ermpp/nn.hpp"
#include "ermpp/optim.hpp"

namespace ermpp {

/// Incremental arithmetic mean over parameter iterates:
/// mean <- mean + (s - mean) / (count + 1).
class RunningAverage {
  public:
    explicit RunningAverage(int64_t burn_in_step) : burn_in_step_(burn_in_step) {}

    /// ContractError before the burn-in step or on a key-set mismatch.
    void update(const ModelState& s);

    int64_t count() const { return count_; }
    int64_t burn_in_step() const { return burn_in_step_; }
    const std::map<std::string, std::vector<double>>& mean() const { return mean_; }

  private:
    std::map<std::string, std::vector<double>> mean_;
    int64_t count_ = 0;
    int64_t burn_in_step_;
};

/// The model actually deployed when parameter averaging is on: averaged
/// parameters plus BatchNorm running statistics accumulated by forward
/// passes of the averaged model itself — never by averaging the per-iterate
/// training statistics.
class AveragedEvalModel {
  public:
    AveragedEvalModel(const ModelSpec& spec, int64_t burn_in_step);

    void update(const ModelState& iterate) { avg_.update(iterate); }

    /// One stat-accumulation forward pass of the averaged parameters over
    /// the batch: normalizes with batch statistics, folds them into this
    /// model's running stats, and touches nothing else. ContractError while
    /// the average is still empty.
    void accumulate_bn(const Tensor& batch_x);

    int64_t count() const { return avg_.count(); }
    const RunningAverage& average() const { return avg_; }

    /// Averaged parameters combined with the accumulated BN statistics.
    ModelState deployment_state() const;

  private:
    ModelSpec spec_;
    RunningAverage avg_;
    Model stats_model_;
};

struct SmpaConfig {
    int specialist_steps = 300;
    int recompute_batches = 50;
    int per_domain_batch = 8;
    AdamConfig adam;
    bool unfreeze_bn = true;
    uint64_t seed = 0;
};

/// Specialist averaging: fine-tune one specialist per source domain from the
/// generalist, average the specialists uniformly, then recompute BN running
/// statistics with accumulation passes over batches drawn from all source
/// domains. Every specialist draws from the same derived RNG stream, so
/// identical domains with identical seeds produce identical specialists.
ModelState smpa(const ModelSpec& spec, const ModelState& generalist,
                const MultiDomainDataset& ds, const std::vector<std::string>& domains,
                const SmpaConfig& cfg);

}  // namespace ermpp
