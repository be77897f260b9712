#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ermpp/optim.hpp"
#include "ermpp/rng.hpp"
#include "oracles.hpp"

using namespace ermpp;

namespace {

std::vector<std::pair<std::string, Tensor>> one_param(double value) {
    return {{"p", Tensor::from({1}, {value}, true)}};
}

FreezeMask mask_of(std::initializer_list<const char*> names) {
    FreezeMask m;
    for (const char* n : names) m.trainable.insert(n);
    return m;
}

ModelSpec mlp_spec(bool bn) {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_dims = {4, 3};
    spec.num_classes = 2;
    spec.use_batchnorm = bn;
    return spec;
}

}  // namespace

TEST_CASE("adam single step matches the hand-computed oracle") {
    // p=1, g=1, lr=0.1: m=0.1, v=0.001, m_hat=1, v_hat=1,
    // p <- 1 - 0.1 / (1 + 1e-8).
    auto params = one_param(1.0);
    params[0].second.mutable_grad()[0] = 1.0;
    Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    adam.step(params, mask_of({"p"}));
    CHECK(adam.moment1("p", 1)[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(adam.moment2("p", 1)[0] == doctest::Approx(0.001).epsilon(1e-15));
    const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    CHECK(std::abs(params[0].second.values()[0] - expected) < 1e-12);
}

TEST_CASE("parameter outside the mask stays bitwise unchanged, moments included") {
    auto params = one_param(1.0);
    params.push_back({"frozen", Tensor::from({2}, {0.5, -0.5}, true)});
    params[0].second.mutable_grad()[0] = 1.0;
    auto& fg = params[1].second.mutable_grad();
    fg[0] = 3.0;
    fg[1] = -4.0;
    Adam adam(AdamConfig{0.1});
    adam.step(params, mask_of({"p"}));
    CHECK(params[1].second.values() == std::vector<double>{0.5, -0.5});
    CHECK(adam.moment1("frozen", 2) == std::vector<double>{0.0, 0.0});
    CHECK(adam.moment2("frozen", 2) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("zero gradient leaves the parameter unchanged") {
    auto params = one_param(0.7);
    params[0].second.mutable_grad()[0] = 0.0;
    Adam adam(AdamConfig{0.1});
    for (int i = 0; i < 5; ++i) adam.step(params, mask_of({"p"}));
    CHECK(params[0].second.values()[0] == 0.7);
}

TEST_CASE("missing gradient for a masked parameter is a contract error") {
    auto params = one_param(1.0);
    Adam adam(AdamConfig{0.1});
    CHECK_THROWS_AS(adam.step(params, mask_of({"p"})), ContractError);
}

TEST_CASE("adam step count advances by exactly one per step") {
    auto params = one_param(1.0);
    Adam adam(AdamConfig{0.01});
    for (int i = 1; i <= 7; ++i) {
        params[0].second.zero_grad();
        params[0].second.mutable_grad()[0] = 0.3;
        adam.step(params, mask_of({"p"}));
        CHECK(adam.step_count() == i);
    }
}

TEST_CASE("50-step trajectory on a 2-parameter quadratic matches an independent recurrence") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double a0 = 2.0, a1 = 0.5;  // f(p) = (a0 p0^2 + a1 p1^2) / 2
    Tensor p = Tensor::from({2}, {1.0, -1.5}, true);
    std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
    Adam adam(AdamConfig{lr, b1, b2, eps, 0.0});
    double q0 = 1.0, q1 = -1.5, m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    for (int t = 1; t <= 50; ++t) {
        p.zero_grad();
        auto& g = p.mutable_grad();
        g[0] = a0 * p.values()[0];
        g[1] = a1 * p.values()[1];
        adam.step(params, mask_of({"p"}));
        const double g0 = a0 * q0, g1 = a1 * q1;
        m0 = b1 * m0 + (1 - b1) * g0;
        m1 = b1 * m1 + (1 - b1) * g1;
        v0 = b2 * v0 + (1 - b2) * g0 * g0;
        v1 = b2 * v1 + (1 - b2) * g1 * g1;
        const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
        q0 -= lr * (m0 / c1) / (std::sqrt(v0 / c2) + eps);
        q1 -= lr * (m1 / c1) / (std::sqrt(v1 / c2) + eps);
        CHECK(std::abs(p.values()[0] - q0) < 1e-10);
        CHECK(std::abs(p.values()[1] - q1) < 1e-10);
    }
}

TEST_CASE("adam on a quadratic approaches zero monotonically until the step-size basin") {
    for (double lr : {0.1, 0.05, 0.01}) {
        Tensor p = Tensor::from({1}, {1.0}, true);
        std::vector<std::pair<std::string, Tensor>> params = {{"p", p}};
        Adam adam(AdamConfig{lr});
        double prev = 1.0;
        bool reached_basin = false;
        for (int t = 1; t <= 400; ++t) {
            p.zero_grad();
            p.mutable_grad()[0] = p.values()[0];  // gradient of p^2/2
            adam.step(params, mask_of({"p"}));
            const double cur = std::abs(p.values()[0]);
            if (cur < 2.0 * lr) {
                reached_basin = true;
                break;
            }
            CHECK(cur < prev);
            prev = cur;
        }
        CHECK(reached_basin);
    }
}

TEST_CASE("warmstart head mask holds exactly the classifier weight and bias") {
    Model model(mlp_spec(true), 1);
    const FreezeMask head = warmstart_mask(model, WarmstartPhase::Head);
    CHECK(head.trainable == std::set<std::string>{"head.weight", "head.bias"});
    // Head mask has size 2 for any architecture.
    Model deeper(ModelSpec{5, {8, 8, 8}, 4, true}, 2);
    CHECK(warmstart_mask(deeper, WarmstartPhase::Head).trainable.size() == 2);
}

TEST_CASE("all mask excludes BN affine parameters while BN is frozen") {
    Model model(mlp_spec(true), 1);
    model.set_bn_frozen(true);
    const FreezeMask all = warmstart_mask(model, WarmstartPhase::All);
    for (const auto& name : all.trainable) {
        CHECK(name.find(".bn.") == std::string::npos);
    }
    model.set_bn_frozen(false);
    const FreezeMask unfrozen = warmstart_mask(model, WarmstartPhase::All);
    CHECK(unfrozen.trainable.count("backbone.0.bn.gamma") == 1);
    CHECK(unfrozen.trainable.count("backbone.1.bn.beta") == 1);
    CHECK(unfrozen.trainable.size() == all.trainable.size() + 4);
}

TEST_CASE("l2 distance from init") {
    Model model(mlp_spec(false), 3);
    const ModelState a = model.extract_state();
    SUBCASE("identical states give zero") {
        CHECK(l2_distance_from_init(a, a) == 0.0);
    }
    SUBCASE("3-4-5") {
        ModelState x = a, y = a;
        for (auto& [k, v] : x.params) {
            for (auto& e : v) e = 0.0;
        }
        for (auto& [k, v] : y.params) {
            for (auto& e : v) e = 0.0;
        }
        x.params["head.bias"] = {3.0, 4.0};
        y.params["head.bias"] = {0.0, 0.0};
        CHECK(l2_distance_from_init(x, y) == doctest::Approx(5.0).epsilon(1e-15));
    }
    SUBCASE("key mismatch is an architecture error") {
        Model other(ModelSpec{2, {5}, 2, false}, 4);
        CHECK_THROWS_AS(l2_distance_from_init(a, other.extract_state()), ArchitectureError);
    }
}

TEST_CASE("freeze soundness: unmasked parameters equal initialization at every step") {
    auto rng = make_rng(derive_seed(6, "test.freeze"));
    Model model(mlp_spec(true), derive_seed(6, "init"));
    const ModelState init = model.extract_state();
    auto params = model.named_parameters();
    const FreezeMask head = warmstart_mask(model, WarmstartPhase::Head);
    Adam adam(AdamConfig{0.05});
    for (int step = 0; step < 30; ++step) {
        Tape tape;
        Tensor x = oracles::random_tensor({8, 2}, rng);
        Tensor logits = model.forward(&tape, x, RunMode::Train);
        Tensor loss = softmax_cross_entropy(&tape, logits, std::vector<int>(8, step % 2));
        for (auto& [name, p] : params) p.zero_grad();
        tape.backward(loss);
        adam.step(params, head);
        for (const auto& [name, values] : model.extract_state().params) {
            if (!head.contains(name)) {
                CHECK(values == init.params.at(name));
            }
        }
    }
    // The backbone-restricted distance is exactly zero after head-only training.
    CHECK(l2_distance_from_init_prefixed(model.extract_state(), init, "backbone.") == 0.0);
    CHECK(l2_distance_from_init(model.extract_state(), init) > 0.0);
}

TEST_CASE("same seed gives identical moment trajectories") {
    auto run = [](uint64_t seed) {
        auto rng = make_rng(seed);
        Model model(mlp_spec(true), seed);
        auto params = model.named_parameters();
        const FreezeMask all = warmstart_mask(model, WarmstartPhase::All);
        Adam adam(AdamConfig{0.01});
        for (int step = 0; step < 10; ++step) {
            Tape tape;
            Tensor x = oracles::random_tensor({6, 2}, rng);
            Tensor loss = softmax_cross_entropy(
                &tape, model.forward(&tape, x, RunMode::Train), std::vector<int>(6, 1));
            for (auto& [name, p] : params) p.zero_grad();
            tape.backward(loss);
            adam.step(params, all);
        }
        return std::make_pair(adam.moment1_map(), adam.moment2_map());
    };
    const auto a = run(1234);
    const auto b = run(1234);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}
