#include "ermpp/averaging.hpp"

#include <string>

#include "ermpp/rng.hpp"

namespace ermpp {

void RunningAverage::update(const ModelState& s) {
    if (s.step < burn_in_step_) {
        throw ContractError("running average update at step " + std::to_string(s.step) +
                            " before burn-in step " + std::to_string(burn_in_step_));
    }
    if (count_ == 0) {
        mean_ = s.params;
        count_ = 1;
        return;
    }
    if (mean_.size() != s.params.size()) {
        throw ArchitectureError("running average key count mismatch");
    }
    const double k = static_cast<double>(count_ + 1);
    for (auto& [name, acc] : mean_) {
        auto it = s.params.find(name);
        if (it == s.params.end()) {
            throw ArchitectureError("running average missing parameter: " + name);
        }
        const auto& cur = it->second;
        for (size_t i = 0; i < acc.size(); ++i) {
            acc[i] += (cur[i] - acc[i]) / k;
        }
    }
    ++count_;
}

AveragedEvalModel::AveragedEvalModel(const ModelSpec& spec, int64_t burn_in_step)
    : spec_(spec), avg_(burn_in_step), stats_model_(spec, /*init_seed=*/0) {}

void AveragedEvalModel::accumulate_bn(const Tensor& batch_x) {
    if (avg_.count() == 0) {
        throw ContractError("BN stat accumulation before any averaged iterate");
    }
    // Copies of the averaged parameters go in; only this model's running
    // stats come out changed.
    stats_model_.inject_params(avg_.mean());
    stats_model_.set_bn_frozen(false);
    (void)stats_model_.forward(nullptr, batch_x, RunMode::Train);
}

ModelState AveragedEvalModel::deployment_state() const {
    ModelState s = stats_model_.extract_state();
    s.params = avg_.mean();
    return s;
}

namespace {

ModelState train_specialist(const ModelSpec& spec, const ModelState& generalist,
                            const MultiDomainDataset& ds, const std::string& domain,
                            const SmpaConfig& cfg) {
    Model model(spec, /*init_seed=*/0);
    model.inject_state(generalist);
    model.set_bn_frozen(!cfg.unfreeze_bn);
    Adam adam(cfg.adam);
    const FreezeMask mask = warmstart_mask(model, WarmstartPhase::All);
    auto params = model.named_parameters();
    // One shared stream for every specialist: with identical per-domain data
    // and identical seeds the specialists coincide exactly.
    BalancedBatchIterator batches(ds, {domain}, cfg.per_domain_batch,
                                  derive_seed(cfg.seed, "smpa.specialist"));
    for (int step = 1; step <= cfg.specialist_steps; ++step) {
        DomainBatch batch = batches.next();
        Tape tape;
        Tensor logits = model.forward(&tape, batch.x, RunMode::Train);
        Tensor loss = softmax_cross_entropy(&tape, logits, batch.y);
        for (auto& [name, p] : params) p.zero_grad();
        tape.backward(loss);
        adam.step(params, mask);
        model.set_step(generalist.step + step);
    }
    return model.extract_state();
}

}  // namespace

ModelState smpa(const ModelSpec& spec, const ModelState& generalist,
                const MultiDomainDataset& ds, const std::vector<std::string>& domains,
                const SmpaConfig& cfg) {
    if (domains.size() < 2) {
        throw ContractError("SMPA needs at least 2 domains to average");
    }
    RunningAverage merge(/*burn_in_step=*/0);
    for (const auto& domain : domains) {
        merge.update(train_specialist(spec, generalist, ds, domain, cfg));
    }
    AveragedEvalModel merged(spec, /*burn_in_step=*/0);
    // Re-seed the merged average from the computed specialist mean.
    ModelState mean_state = generalist;
    mean_state.params = merge.mean();
    mean_state.step = generalist.step + cfg.specialist_steps;
    merged.update(mean_state);
    BalancedBatchIterator recompute(ds, domains, cfg.per_domain_batch,
                                    derive_seed(cfg.seed, "smpa.recompute"));
    for (int i = 0; i < cfg.recompute_batches; ++i) {
        merged.accumulate_bn(recompute.next().x);
    }
    return merged.deployment_state();
}

}  // namespace ermpp
