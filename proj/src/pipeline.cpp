#include "ermpp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <thread>

#include "ermpp/checkpoint.hpp"
#include "ermpp/rng.hpp"

namespace ermpp {

std::string ComponentToggles::label() const {
    std::string out;
    auto add = [&out](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += "+";
        out += name;
    };
    add(mpa, "mpa");
    add(fd, "fd");
    add(lt, "lt");
    add(ws, "ws");
    add(es, "es");
    add(strong_init, "strong_init");
    add(ubn, "ubn");
    if (out.empty()) out = "none";
    out += sampler == SamplerKind::Balanced ? "/balanced" : "/resampled";
    return out;
}

ResolvedSchedule resolve_schedule(const TrainSchedule& schedule, const ComponentToggles& toggles) {
    if (schedule.total_steps < 1) {
        throw ConfigError("schedule total_steps must be >= 1");
    }
    if (schedule.val_every < 1) {
        throw ConfigError("schedule val_every must be >= 1");
    }
    ResolvedSchedule r;
    r.total_steps = toggles.lt
                        ? static_cast<int>(std::llround(schedule.total_steps *
                                                        schedule.long_train_multiplier))
                        : schedule.total_steps;
    r.warmstart_steps = toggles.ws ? schedule.warmstart_steps : 0;
    if (toggles.ws && schedule.warmstart_steps < 1) {
        throw ConfigError("warmstart toggle is on but warmstart_steps < 1");
    }
    r.mpa_burn_in = schedule.mpa_burn_in >= 0 ? schedule.mpa_burn_in
                                              : (toggles.ws ? r.warmstart_steps + 100 : 100);
    if (toggles.ws && r.mpa_burn_in < r.warmstart_steps + 100) {
        throw ConfigError("mpa_burn_in must be >= warmstart_steps + 100 when warmstart is on (" +
                          std::to_string(r.mpa_burn_in) + " < " +
                          std::to_string(r.warmstart_steps + 100) + ")");
    }
    r.val_every = schedule.val_every;
    return r;
}

int select_training_length(const std::vector<ValidationPoint>& curve) {
    if (curve.empty()) {
        throw ConfigError("no validation points recorded; schedule is shorter than val_every");
    }
    int best_step = curve.front().step;
    double best_acc = curve.front().accuracy;
    for (const auto& p : curve) {
        if (p.accuracy > best_acc) {
            best_acc = p.accuracy;
            best_step = p.step;
        }
    }
    return best_step;
}

TrainResult train_ermpp(Model& model, BatchIterator& data, const PooledData* val,
                        const ResolvedSchedule& sched, const ComponentToggles& toggles,
                        const AdamConfig& adam_cfg, const TrainHooks& hooks) {
    model.set_bn_frozen(!toggles.ubn);
    TrainResult result;
    result.init_state = model.extract_state();

    Adam adam(adam_cfg);
    auto params = model.named_parameters();
    FreezeMask head_mask = warmstart_mask(model, WarmstartPhase::Head);
    FreezeMask all_mask = warmstart_mask(model, WarmstartPhase::All);

    std::unique_ptr<AveragedEvalModel> avg;
    if (toggles.mpa) {
        avg = std::make_unique<AveragedEvalModel>(model.spec(), sched.mpa_burn_in);
    }

    auto deployment_state = [&](int step) {
        ModelState s = (avg && avg->count() > 0) ? avg->deployment_state() : model.extract_state();
        s.step = step;
        return s;
    };

    for (int step = 1; step <= sched.total_steps; ++step) {
        DomainBatch batch = data.next();
        Tape tape;
        Tensor logits = model.forward(&tape, batch.x, RunMode::Train);
        Tensor loss = softmax_cross_entropy(&tape, logits, batch.y);
        for (auto& [name, p] : params) p.zero_grad();
        tape.backward(loss);
        adam.step(params, step <= sched.warmstart_steps ? head_mask : all_mask);
        model.set_step(step);
        if (hooks.after_step) {
            hooks.after_step(step, model, adam);
        }
        if (avg && step >= sched.mpa_burn_in) {
            avg->update(model.extract_state());
            if (toggles.ubn) {
                avg->accumulate_bn(batch.x);
            }
        }
        if (val && step % sched.val_every == 0) {
            result.val_curve.push_back(
                {step, evaluate_accuracy(model.spec(), deployment_state(step), val->x, val->y)});
        }
    }

    result.steps_executed = sched.total_steps;
    result.final_iterate = model.extract_state();
    result.deployment = deployment_state(sched.total_steps);
    result.adam_m = adam.moment1_map();
    result.adam_v = adam.moment2_map();
    return result;
}

namespace {

std::vector<std::string> source_domains(const MultiDomainDataset& ds, const std::string& held_out) {
    if (!ds.has_domain(held_out)) {
        throw IndexError("held-out domain '" + held_out + "' not in dataset");
    }
    std::vector<std::string> out;
    for (const auto& name : ds.domain_names()) {
        if (name != held_out) out.push_back(name);
    }
    if (out.empty()) {
        throw ContractError("no source domains left after holding out '" + held_out + "'");
    }
    return out;
}

Model make_initial_model(const MultiDomainDataset& ds, const ProtocolConfig& cfg,
                         uint64_t init_seed) {
    ModelSpec spec = cfg.model_spec;
    spec.input_dim = ds.input_dim();
    spec.num_classes = ds.num_classes();
    Model model(spec, init_seed);
    if (cfg.toggles.strong_init) {
        if (!cfg.strong_init) {
            throw ConfigError("strong_init toggle is on but no pretrained checkpoint was given");
        }
        // Backbone parameters and BN statistics come from the pretrained
        // state; the classifier head keeps its fresh initialization.
        std::map<std::string, std::vector<double>> backbone;
        ModelState current = model.extract_state();
        for (auto& [name, values] : current.params) {
            if (name.rfind("backbone.", 0) == 0) {
                auto it = cfg.strong_init->params.find(name);
                if (it == cfg.strong_init->params.end()) {
                    throw ArchitectureError("pretrained checkpoint lacks parameter " + name);
                }
                backbone[name] = it->second;
            } else {
                backbone[name] = values;
            }
        }
        model.inject_params(backbone);
        ModelState with_stats = model.extract_state();
        for (auto& [name, stats] : with_stats.bn_stats) {
            auto it = cfg.strong_init->bn_stats.find(name);
            if (it == cfg.strong_init->bn_stats.end()) {
                throw ArchitectureError("pretrained checkpoint lacks BN statistics " + name);
            }
            stats = it->second;
        }
        model.inject_state(with_stats);
        model.set_step(0);
    }
    return model;
}

std::unique_ptr<BatchIterator> make_sampler(const MultiDomainDataset& ds,
                                            const std::vector<std::string>& sources,
                                            const DomainPool* pool, const ProtocolConfig& cfg,
                                            uint64_t seed) {
    if (cfg.toggles.sampler == SamplerKind::Balanced) {
        return std::make_unique<BalancedBatchIterator>(ds, sources, cfg.per_domain_batch, seed,
                                                       pool);
    }
    return std::make_unique<ResampledBatchIterator>(ds, sources, cfg.total_batch, seed, pool);
}

DomainPool full_pool(const MultiDomainDataset& ds, const std::vector<std::string>& sources) {
    DomainPool pool;
    for (const auto& name : sources) {
        std::vector<int> idx(ds.domain(name).n());
        std::iota(idx.begin(), idx.end(), 0);
        pool[name] = std::move(idx);
    }
    return pool;
}

DomainPool union_pool(const SplitDataset& sp, const std::vector<std::string>& sources) {
    DomainPool pool;
    for (const auto& name : sources) {
        std::vector<int> idx = sp.train.at(name);
        idx.insert(idx.end(), sp.val.at(name).begin(), sp.val.at(name).end());
        std::sort(idx.begin(), idx.end());
        pool[name] = std::move(idx);
    }
    return pool;
}

DomainPool subset_pool(const std::map<std::string, std::vector<int>>& side,
                       const std::vector<std::string>& sources) {
    DomainPool pool;
    for (const auto& name : sources) {
        pool[name] = side.at(name);
    }
    return pool;
}

RunRecord finish_record(const MultiDomainDataset& ds, const ProtocolConfig& cfg,
                        const TrainResult& final_pass, RunRecord rec,
                        const std::string& held_out, const DomainPool& deploy_pool) {
    PooledData held = pool_domains(ds, {held_out});
    ModelSpec spec = cfg.model_spec;
    spec.input_dim = ds.input_dim();
    spec.num_classes = ds.num_classes();
    rec.held_out_accuracy = evaluate_accuracy(spec, final_pass.deployment, held.x, held.y);
    rec.l2_from_init = l2_distance_from_init(final_pass.deployment, final_pass.init_state);
    rec.checkpoint_digest =
        state_digest(final_pass.deployment, spec.hash(), /*averaged=*/cfg.toggles.mpa);
    rec.steps_executed = final_pass.steps_executed;
    for (const auto& [name, idx] : deploy_pool) {
        rec.pool_sizes[name] = static_cast<int>(idx.size());
    }
    rec.generator_spec = ds.generator_spec().describe();
    rec.deployment = final_pass.deployment;
    return rec;
}

}  // namespace

RunRecord two_pass_protocol(const MultiDomainDataset& ds, const std::string& held_out,
                            const ProtocolConfig& cfg, uint64_t master_seed, int trial) {
    if (!cfg.toggles.es) {
        throw ContractError("two-pass protocol requires the early-stopping toggle");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto sources = source_domains(ds, held_out);
    const uint64_t trial_seed = derive_seed(master_seed, "trial." + std::to_string(trial));
    const ResolvedSchedule resolved = resolve_schedule(cfg.schedule, cfg.toggles);
    const SplitDataset sp = split(ds, cfg.val_fraction, derive_seed(trial_seed, "split"));
    const uint64_t init_seed = derive_seed(trial_seed, "init");

    // Pass 1: train split only, validation picks the training length. An
    // injected curve replaces the measured one when the hook is set.
    std::vector<ValidationPoint> curve;
    if (cfg.val_curve_override) {
        curve = *cfg.val_curve_override;
    } else {
        Model model1 = make_initial_model(ds, cfg, init_seed);
        const DomainPool train_pool = subset_pool(sp.train, sources);
        auto iter1 = make_sampler(ds, sources, &train_pool, cfg,
                                  derive_seed(trial_seed, "batches.pass1"));
        const DomainPool val_idx = subset_pool(sp.val, sources);
        PooledData val_pool = pool_domains(ds, sources, &val_idx);
        curve = train_ermpp(model1, *iter1, &val_pool, resolved, cfg.toggles, cfg.adam).val_curve;
    }
    const int phi = select_training_length(curve);

    // Pass 2: identical initialization, train(+val) pool, exactly phi steps,
    // batches from a distinct stream.
    ResolvedSchedule pass2_sched = resolved;
    pass2_sched.total_steps = phi;
    Model model2 = make_initial_model(ds, cfg, init_seed);
    const DomainPool deploy_pool =
        cfg.toggles.fd ? union_pool(sp, sources) : subset_pool(sp.train, sources);
    auto iter2 = make_sampler(ds, sources, &deploy_pool, cfg,
                              derive_seed(trial_seed, "batches.pass2"));
    TrainResult pass2 = train_ermpp(model2, *iter2, nullptr, pass2_sched, cfg.toggles, cfg.adam);

    RunRecord rec;
    rec.toggles = cfg.toggles;
    rec.schedule = cfg.schedule;
    rec.schedule.early_stop_step = phi;
    rec.resolved = resolved;
    rec.master_seed = master_seed;
    rec.trial = trial;
    rec.trial_seed = trial_seed;
    rec.held_out_domain = held_out;
    rec.val_curve = curve;
    rec.phi = phi;
    rec = finish_record(ds, cfg, pass2, std::move(rec), held_out, deploy_pool);
    rec.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

RunRecord run_protocol(const MultiDomainDataset& ds, const std::string& held_out,
                       const ProtocolConfig& cfg, uint64_t master_seed, int trial) {
    if (cfg.toggles.es) {
        return two_pass_protocol(ds, held_out, cfg, master_seed, trial);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto sources = source_domains(ds, held_out);
    const uint64_t trial_seed = derive_seed(master_seed, "trial." + std::to_string(trial));
    const ResolvedSchedule resolved = resolve_schedule(cfg.schedule, cfg.toggles);
    const uint64_t init_seed = derive_seed(trial_seed, "init");

    Model model = make_initial_model(ds, cfg, init_seed);
    DomainPool pool;
    std::optional<PooledData> val_pool;
    if (cfg.toggles.fd) {
        // Full data for the nominal budget; no validation split exists.
        pool = full_pool(ds, sources);
    } else {
        const SplitDataset sp = split(ds, cfg.val_fraction, derive_seed(trial_seed, "split"));
        pool = subset_pool(sp.train, sources);
        const DomainPool vp = subset_pool(sp.val, sources);
        val_pool = pool_domains(ds, sources, &vp);
    }
    auto iter = make_sampler(ds, sources, &pool, cfg, derive_seed(trial_seed, "batches.pass1"));
    TrainResult pass = train_ermpp(model, *iter, val_pool ? &*val_pool : nullptr, resolved,
                                   cfg.toggles, cfg.adam);

    RunRecord rec;
    rec.toggles = cfg.toggles;
    rec.schedule = cfg.schedule;
    rec.resolved = resolved;
    rec.master_seed = master_seed;
    rec.trial = trial;
    rec.trial_seed = trial_seed;
    rec.held_out_domain = held_out;
    rec.val_curve = pass.val_curve;
    rec = finish_record(ds, cfg, pass, std::move(rec), held_out, pool);
    rec.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

namespace {

void parallel_for_jobs(int num_jobs, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, num_jobs));
    if (workers == 1) {
        for (int i = 0; i < num_jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            try {
                for (int i = next.fetch_add(1); i < num_jobs; i = next.fetch_add(1)) {
                    fn(i);
                }
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double sample_stderr(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return sd / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace

EvalReport leave_one_domain_out(const MultiDomainDataset& ds, const ProtocolConfig& cfg,
                                uint64_t master_seed, int num_trials, int workers) {
    if (ds.domain_names().size() < 2) {
        throw ContractError("leave-one-domain-out needs at least 2 domains");
    }
    if (num_trials < 1) {
        throw ContractError("leave-one-domain-out needs at least 1 trial");
    }
    const auto& domains = ds.domain_names();
    const int num_jobs = static_cast<int>(domains.size()) * num_trials;
    std::vector<RunRecord> records(static_cast<size_t>(num_jobs));
    parallel_for_jobs(num_jobs, workers, [&](int job) {
        const int d = job / num_trials;
        const int trial = job % num_trials;
        records[static_cast<size_t>(job)] = run_protocol(ds, domains[d], cfg, master_seed, trial);
    });

    EvalReport report;
    report.label = cfg.toggles.label();
    report.num_trials = num_trials;
    report.held_out_domains = domains;
    report.records = std::move(records);
    double sum_means = 0.0;
    for (size_t d = 0; d < domains.size(); ++d) {
        std::vector<double> accs;
        for (int t = 0; t < num_trials; ++t) {
            accs.push_back(report.records[d * num_trials + t].held_out_accuracy);
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        report.accuracies.push_back(accs);
        report.domain_mean.push_back(mean);
        report.domain_stderr.push_back(sample_stderr(accs));
        sum_means += mean;
    }
    report.average = sum_means / static_cast<double>(domains.size());
    return report;
}

std::vector<EvalReport> ablation_grid(const MultiDomainDataset& ds, const ProtocolConfig& base,
                                      const std::vector<ComponentToggles>& toggle_sets,
                                      uint64_t master_seed, int num_trials, int workers) {
    std::vector<EvalReport> reports;
    reports.reserve(toggle_sets.size());
    for (const auto& toggles : toggle_sets) {
        ProtocolConfig cfg = base;
        cfg.toggles = toggles;
        reports.push_back(leave_one_domain_out(ds, cfg, master_seed, num_trials, workers));
    }
    return reports;
}

}  // namespace ermpp
