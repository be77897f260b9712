#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ermpp/tensor.hpp"

namespace ermpp {

enum class RunMode { Train, Eval };

/// Architecture description. The backbone is one Linear(+BatchNorm)+ReLU
/// block per hidden dim; the classifier head is the final Linear.
struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 0;
    bool use_batchnorm = true;

    void validate() const;
    uint64_t hash() const;
};

struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;

    bool operator==(const BnStats&) const = default;
};

/// Snapshot of everything a checkpoint holds: named parameter arrays, named
/// BatchNorm running statistics, and the step counter. Immutable by
/// convention once extracted.
struct ModelState {
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, BnStats> bn_stats;
    int64_t step = 0;
};

/// ArchitectureError naming the symmetric difference when the two states'
/// key sets disagree.
void require_same_keys(const ModelState& a, const ModelState& b);

class LinearLayer {
  public:
    /// Kaiming-uniform weight in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero bias.
    LinearLayer(int in_dim, int out_dim, uint64_t seed);

    Tensor forward(Tape* tape, const Tensor& x) const;

    Tensor weight;  // [in_dim x out_dim]
    Tensor bias;    // [out_dim]
};

class BatchNormLayer {
  public:
    explicit BatchNormLayer(int channels);

    /// Train mode (B >= 2): normalizes with batch statistics (biased
    /// variance) and, unless frozen, folds the batch into the running stats
    /// (EMA, unbiased variance). Eval mode (B >= 1): normalizes with running
    /// stats only and mutates nothing.
    Tensor forward(Tape* tape, const Tensor& x, RunMode mode);

    int channels() const { return static_cast<int>(running_mean.size()); }

    Tensor gamma;  // scale, learnable
    Tensor beta;   // shift, learnable
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    bool frozen = false;
};

/// Backbone + classifier MLP. Parameter names are stable and documented:
///   backbone.<i>.linear.weight / .bias
///   backbone.<i>.bn.gamma / .beta        (when use_batchnorm)
///   head.weight / head.bias
/// BatchNorm running statistics live under the key backbone.<i>.bn.
class Model {
  public:
    Model(const ModelSpec& spec, uint64_t init_seed);

    Tensor forward(Tape* tape, const Tensor& x, RunMode mode);

    const ModelSpec& spec() const { return spec_; }

    ModelState extract_state() const;
    void inject_state(const ModelState& s);
    /// Overwrite parameters only, leaving BN running stats in place.
    void inject_params(const std::map<std::string, std::vector<double>>& params);

    /// Parameter handles in deterministic order (backbone blocks, then head).
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<std::string> parameter_names() const;
    std::vector<std::string> head_parameter_names() const;

    void set_bn_frozen(bool frozen);
    bool bn_frozen() const;

    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }

  private:
    struct Block {
        LinearLayer linear;
        std::optional<BatchNormLayer> bn;
    };

    ModelSpec spec_;
    std::vector<Block> blocks_;
    LinearLayer head_;
    int64_t step_ = 0;
};

/// Argmax-over-logits accuracy of a state on (x, labels), eval mode.
double evaluate_accuracy(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                         const std::vector<int>& labels);

}  // namespace ermpp
