#include "ermpp/verify.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ermpp/averaging.hpp"
#include "ermpp/data.hpp"
#include "ermpp/nn.hpp"
#include "ermpp/optim.hpp"
#include "ermpp/pipeline.hpp"
#include "ermpp/rng.hpp"

namespace ermpp {

namespace {

struct SuiteResult {
    bool ok = true;
    std::string detail;

    void check(bool cond, const std::string& msg) {
        if (!cond && ok) {
            ok = false;
            detail = msg;
        }
    }
};

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, bool requires_grad) {
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

// Scalarize the op output with fixed weights, recorded onto the tape like
// any other op, and compare analytic input gradients against central finite
// differences of the same scalar.
double max_rel_error(Tensor input, const std::function<Tensor(Tape*, const Tensor&)>& op,
                     std::mt19937_64& rng, double skip_below = -1.0) {
    std::uniform_real_distribution<double> wdist(-1.0, 1.0);
    input.set_requires_grad(true);
    Tape tape;
    Tensor out = op(&tape, input);
    std::vector<double> weights(out.values().size());
    for (auto& w : weights) w = wdist(rng);
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) acc += weights[i] * out.values()[i];
    Tensor loss = Tensor::scalar(acc);
    loss.set_requires_grad(true);
    {
        Tensor to = out, tl = loss;
        tape.record(loss, [to, tl, weights]() mutable {
            if (!tl.has_grad()) return;
            const double g = tl.grad()[0];
            auto& og = to.mutable_grad();
            for (size_t i = 0; i < weights.size(); ++i) og[i] += g * weights[i];
        });
    }
    tape.backward(loss);

    const double h = 1e-5;
    double worst = 0.0;
    auto eval = [&](const Tensor& x) {
        Tensor o = op(nullptr, x);
        double s = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) s += weights[i] * o.values()[i];
        return s;
    };
    const auto& analytic = input.grad();
    for (size_t i = 0; i < input.values().size(); ++i) {
        if (skip_below > 0.0 && std::abs(input.values()[i]) < skip_below) continue;
        Tensor xp = input.clone();
        Tensor xm = input.clone();
        xp.values()[i] += h;
        xm.values()[i] -= h;
        const double fd = (eval(xp) - eval(xm)) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
    return worst;
}

SuiteResult gradient_suite() {
    SuiteResult r;
    auto rng = make_rng(derive_seed(7, "verify.grad"));
    const double tol = 1e-4;
    for (int trial = 0; trial < 20 && r.ok; ++trial) {
        Tensor b = random_tensor({3, 5}, rng, false);
        double err = max_rel_error(
            random_tensor({4, 3}, rng, true),
            [&](Tape* t, const Tensor& a) { return matmul(t, a, b); }, rng);
        r.check(err < tol, "matmul grad rel err " + std::to_string(err) + " >= 1e-4");

        err = max_rel_error(
            random_tensor({6, 4}, rng, true),
            [&](Tape* t, const Tensor& x) { return relu(t, x); }, rng, /*skip_below=*/1e-3);
        r.check(err < tol, "relu grad rel err " + std::to_string(err) + " >= 1e-4");

        std::vector<int> labels = {1, 0, 4, 2, 3, 1, 0, 2};
        err = max_rel_error(
            random_tensor({8, 5}, rng, true),
            [&](Tape* t, const Tensor& z) { return softmax_cross_entropy(t, z, labels); }, rng);
        r.check(err < tol, "cross-entropy grad rel err " + std::to_string(err) + " >= 1e-4");

        Tensor x = random_tensor({5, 3}, rng, false);
        err = max_rel_error(
            random_tensor({3}, rng, true),
            [&](Tape* t, const Tensor& bias) { return add_bias(t, x, bias); }, rng);
        r.check(err < tol, "bias-add grad rel err " + std::to_string(err) + " >= 1e-4");

        BatchNormLayer bn(4);
        bn.frozen = true;  // hold stats fixed; output math unchanged
        err = max_rel_error(
            random_tensor({8, 4}, rng, true),
            [&](Tape* t, const Tensor& xx) { return bn.forward(t, xx, RunMode::Train); }, rng);
        r.check(err < tol, "batchnorm grad rel err " + std::to_string(err) + " >= 1e-4");
    }
    return r;
}

SuiteResult adam_suite() {
    SuiteResult r;
    // Hand-computed single step: p=1, g=1, lr=0.1 -> m_hat=v_hat=1,
    // p <- 1 - 0.1/(1+1e-8).
    {
        Tensor p = Tensor::from({1}, {1.0}, true);
        p.mutable_grad()[0] = 1.0;
        std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
        Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
        FreezeMask mask;
        mask.trainable.insert("p");
        adam.step(params, mask);
        const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        r.check(std::abs(p.values()[0] - expected) < 1e-12,
                "adam single step deviates from the hand-computed value by more than 1e-12");
    }
    // 50-step trajectory on a 2-parameter quadratic vs an inline recurrence.
    {
        const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double a0 = 2.0, a1 = 0.5;
        Tensor p = Tensor::from({2}, {1.0, -1.5}, true);
        std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
        Adam adam(AdamConfig{lr, b1, b2, eps, 0.0});
        FreezeMask mask;
        mask.trainable.insert("p");
        double q0 = 1.0, q1 = -1.5, m0 = 0, m1 = 0, v0 = 0, v1 = 0;
        for (int t = 1; t <= 50; ++t) {
            p.zero_grad();
            auto& g = p.mutable_grad();
            g[0] = a0 * p.values()[0];
            g[1] = a1 * p.values()[1];
            adam.step(params, mask);
            const double g0 = a0 * q0, g1 = a1 * q1;
            m0 = b1 * m0 + (1 - b1) * g0;
            m1 = b1 * m1 + (1 - b1) * g1;
            v0 = b2 * v0 + (1 - b2) * g0 * g0;
            v1 = b2 * v1 + (1 - b2) * g1 * g1;
            const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
            q0 -= lr * (m0 / c1) / (std::sqrt(v0 / c2) + eps);
            q1 -= lr * (m1 / c1) / (std::sqrt(v1 / c2) + eps);
        }
        r.check(std::abs(p.values()[0] - q0) < 1e-10 && std::abs(p.values()[1] - q1) < 1e-10,
                "adam 50-step trajectory deviates from the oracle by more than 1e-10");
    }
    return r;
}

SuiteResult mpa_suite() {
    SuiteResult r;
    auto rng = make_rng(derive_seed(11, "verify.mpa"));
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    ModelSpec spec;
    spec.input_dim = 3;
    spec.hidden_dims = {4};
    spec.num_classes = 2;
    std::vector<ModelState> states;
    for (int k = 0; k < 7; ++k) {
        Model m(spec, derive_seed(100 + k, "verify"));
        ModelState s = m.extract_state();
        for (auto& [name, vals] : s.params) {
            for (auto& v : vals) v = dist(rng);
        }
        s.step = k;
        states.push_back(std::move(s));
    }
    RunningAverage avg(0);
    for (const auto& s : states) avg.update(s);
    double worst = 0.0;
    for (const auto& [name, mean] : avg.mean()) {
        for (size_t i = 0; i < mean.size(); ++i) {
            double batch = 0.0;
            for (const auto& s : states) batch += s.params.at(name)[i];
            batch /= static_cast<double>(states.size());
            worst = std::max(worst, std::abs(mean[i] - batch));
        }
    }
    r.check(worst < 1e-12, "incremental mean deviates from the batch mean by " +
                               std::to_string(worst) + " >= 1e-12");
    return r;
}

SuiteResult ema_suite() {
    SuiteResult r;
    ModelSpec spec;
    spec.input_dim = 3;
    spec.hidden_dims = {4};
    spec.num_classes = 2;
    Model source(spec, derive_seed(5, "verify.ema"));
    AveragedEvalModel avg(spec, 0);
    ModelState s = source.extract_state();
    s.step = 0;
    avg.update(s);

    auto rng = make_rng(derive_seed(5, "verify.ema.batches"));
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    const int k = 6, batch = 16;
    // Hand-unrolled EMA over the first layer's post-linear activations.
    std::vector<double> exp_mean(4, 0.0), exp_var(4, 1.0);
    Model probe(spec, 0);
    probe.inject_params(avg.average().mean());
    for (int pass = 0; pass < k; ++pass) {
        Tensor x = Tensor::zeros({batch, 3});
        for (auto& v : x.values()) v = dist(rng);
        // Pre-BN activations of the averaged parameters.
        const auto& w = avg.average().mean().at("backbone.0.linear.weight");
        const auto& b = avg.average().mean().at("backbone.0.linear.bias");
        std::vector<double> act(static_cast<size_t>(batch) * 4, 0.0);
        for (int i = 0; i < batch; ++i) {
            for (int j = 0; j < 4; ++j) {
                double acc = b[j];
                for (int d = 0; d < 3; ++d) {
                    acc += x.values()[static_cast<size_t>(i) * 3 + d] * w[static_cast<size_t>(d) * 4 + j];
                }
                act[static_cast<size_t>(i) * 4 + j] = acc;
            }
        }
        for (int j = 0; j < 4; ++j) {
            double m = 0.0;
            for (int i = 0; i < batch; ++i) m += act[static_cast<size_t>(i) * 4 + j];
            m /= batch;
            double v = 0.0;
            for (int i = 0; i < batch; ++i) {
                const double d = act[static_cast<size_t>(i) * 4 + j] - m;
                v += d * d;
            }
            v /= batch;
            exp_mean[j] = 0.9 * exp_mean[j] + 0.1 * m;
            exp_var[j] = 0.9 * exp_var[j] + 0.1 * v * batch / (batch - 1);
        }
        avg.accumulate_bn(x);
    }
    const ModelState dep = avg.deployment_state();
    const auto& got = dep.bn_stats.at("backbone.0.bn");
    double worst = 0.0;
    for (int j = 0; j < 4; ++j) {
        worst = std::max(worst, std::abs(got.mean[j] - exp_mean[j]));
        worst = std::max(worst, std::abs(got.var[j] - exp_var[j]));
    }
    r.check(worst < 1e-12, "accumulated BN stats deviate from the unrolled EMA by " +
                               std::to_string(worst) + " >= 1e-12");
    return r;
}

SuiteResult freeze_suite() {
    SuiteResult r;
    MultiDomainDataset ds = make_rotated_blobs(3, 20.0, 2, 60, 0.3, derive_seed(3, "verify"));
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_dims = {6};
    spec.num_classes = 2;
    Model model(spec, derive_seed(3, "verify.init"));
    const ModelState init = model.extract_state();
    ComponentToggles toggles;
    toggles.ws = true;
    toggles.ubn = true;
    ResolvedSchedule sched{/*total_steps=*/40, /*warmstart_steps=*/40, /*mpa_burn_in=*/140,
                           /*val_every=*/100};
    BalancedBatchIterator it(ds, {"rot0", "rot1"}, 4, derive_seed(3, "verify.batches"));
    TrainResult res = train_ermpp(model, it, nullptr, sched, toggles, AdamConfig{0.01});
    for (const auto& [name, vals] : res.final_iterate.params) {
        if (name.rfind("backbone.", 0) != 0) continue;
        r.check(vals == init.params.at(name),
                "backbone parameter " + name + " changed during warmstart");
    }
    // Frozen BN: a full training step leaves every BN field bit-unchanged.
    Model frozen_model(spec, derive_seed(4, "verify.init"));
    frozen_model.set_bn_frozen(true);
    const ModelState before = frozen_model.extract_state();
    BalancedBatchIterator it2(ds, {"rot0", "rot1"}, 4, derive_seed(4, "verify.batches"));
    ComponentToggles plain;
    plain.ubn = false;
    ResolvedSchedule one{/*total_steps=*/1, /*warmstart_steps=*/0, /*mpa_burn_in=*/100,
                         /*val_every=*/100};
    TrainResult res2 = train_ermpp(frozen_model, it2, nullptr, one, plain, AdamConfig{0.01});
    const ModelState after = res2.final_iterate;
    r.check(after.bn_stats.at("backbone.0.bn") == before.bn_stats.at("backbone.0.bn"),
            "frozen BN running stats changed");
    r.check(after.params.at("backbone.0.bn.gamma") == before.params.at("backbone.0.bn.gamma") &&
                after.params.at("backbone.0.bn.beta") == before.params.at("backbone.0.bn.beta"),
            "frozen BN affine parameters changed");
    return r;
}

bool report(std::ostream& out, const char* name, const SuiteResult& r) {
    out << (r.ok ? "[PASS] " : "[FAIL] ") << name;
    if (!r.ok) out << ": " << r.detail;
    out << "\n";
    return r.ok;
}

}  // namespace

bool run_verify(std::ostream& out) {
    bool ok = true;
    ok &= report(out, "gradient-check", gradient_suite());
    ok &= report(out, "adam-oracle", adam_suite());
    ok &= report(out, "mpa-oracle", mpa_suite());
    ok &= report(out, "ema-oracle", ema_suite());
    ok &= report(out, "freeze-checks", freeze_suite());
    return ok;
}

}  // namespace ermpp
