#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ermpp/nn.hpp"

namespace ermpp {

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2 folded into the gradient before the moments
};

/// Names of the parameters a step is allowed to touch. Everything outside
/// the mask, moments included, stays bit-unchanged.
struct FreezeMask {
    std::set<std::string> trainable;

    bool contains(const std::string& name) const { return trainable.count(name) != 0; }
};

enum class WarmstartPhase { Head, All };

/// Head: classifier weight and bias only. All: every learnable parameter;
/// BatchNorm gamma/beta are included only while BN is unfrozen.
FreezeMask warmstart_mask(const Model& model, WarmstartPhase phase);

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    /// Bias-corrected Adam update over the masked parameters. Gradients are
    /// read from the tensors; a masked parameter without a gradient is a
    /// ContractError. Moments are allocated lazily at zero, so a parameter
    /// that never enters the mask keeps zero (untouched) moments.
    void step(std::vector<std::pair<std::string, Tensor>>& params, const FreezeMask& mask);

    int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    /// Moment snapshots for diagnostics; zeros when the parameter has never
    /// been updated.
    std::vector<double> moment1(const std::string& name, size_t size) const;
    std::vector<double> moment2(const std::string& name, size_t size) const;

    const std::map<std::string, std::vector<double>>& moment1_map() const { return m_; }
    const std::map<std::string, std::vector<double>>& moment2_map() const { return v_; }

  private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

/// sqrt of the summed squared parameter differences; BN running statistics
/// are excluded. ArchitectureError when key sets differ.
double l2_distance_from_init(const ModelState& current, const ModelState& init);

/// Same distance restricted to parameters matching a prefix (diagnostics).
double l2_distance_from_init_prefixed(const ModelState& current, const ModelState& init,
                                      const std::string& prefix);

}  // namespace ermpp
