#include "ermpp/optim.hpp"

#include <cmath>

namespace ermpp {

FreezeMask warmstart_mask(const Model& model, WarmstartPhase phase) {
    FreezeMask mask;
    if (phase == WarmstartPhase::Head) {
        for (const auto& name : model.head_parameter_names()) {
            mask.trainable.insert(name);
        }
        return mask;
    }
    const bool bn_trainable = !model.bn_frozen();
    for (const auto& name : model.parameter_names()) {
        const bool is_bn_param = name.find(".bn.") != std::string::npos;
        if (is_bn_param && !bn_trainable) continue;
        mask.trainable.insert(name);
    }
    return mask;
}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params, const FreezeMask& mask) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (!mask.contains(name)) continue;
        if (!p.has_grad()) {
            throw ContractError("missing gradient for trainable parameter " + name);
        }
        const auto& g = p.grad();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);
        auto& pv = p.values();
        for (size_t i = 0; i < g.size(); ++i) {
            const double grad = g[i] + cfg_.weight_decay * pv[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            pv[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::vector<double> Adam::moment1(const std::string& name, size_t size) const {
    auto it = m_.find(name);
    if (it == m_.end()) return std::vector<double>(size, 0.0);
    return it->second;
}

std::vector<double> Adam::moment2(const std::string& name, size_t size) const {
    auto it = v_.find(name);
    if (it == v_.end()) return std::vector<double>(size, 0.0);
    return it->second;
}

double l2_distance_from_init(const ModelState& current, const ModelState& init) {
    require_same_keys(current, init);
    double sum = 0.0;
    for (const auto& [name, cur] : current.params) {
        const auto& ref = init.params.at(name);
        for (size_t i = 0; i < cur.size(); ++i) {
            const double d = cur[i] - ref[i];
            sum += d * d;
        }
    }
    return std::sqrt(sum);
}

double l2_distance_from_init_prefixed(const ModelState& current, const ModelState& init,
                                      const std::string& prefix) {
    require_same_keys(current, init);
    double sum = 0.0;
    for (const auto& [name, cur] : current.params) {
        if (name.rfind(prefix, 0) != 0) continue;
        const auto& ref = init.params.at(name);
        for (size_t i = 0; i < cur.size(); ++i) {
            const double d = cur[i] - ref[i];
            sum += d * d;
        }
    }
    return std::sqrt(sum);
}

}  // namespace ermpp
