#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ermpp/error.hpp"

namespace ermpp {

/// Dense row-major array of 64-bit floats with an optional gradient buffer.
///
/// Tensor is a shared handle: copies refer to the same storage, which is how
/// layers, the optimizer, and recorded tape nodes observe each other's
/// updates. Storage without grad state is treated as immutable once an op has
/// consumed it.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    int64_t size() const { return static_cast<int64_t>(d_->values.size()); }

    // 2-D accessors; ShapeError when the tensor is not a matrix.
    int rows() const;
    int cols() const;

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }
    double at(int r, int c) const { return d_->values[static_cast<size_t>(r) * cols() + c]; }

    // Scalar extraction; ContractError unless size() == 1.
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    bool has_grad() const { return d_->has_grad; }
    const std::vector<double>& grad() const;
    /// Gradient buffer, zero-allocated on first use. Backward rules
    /// accumulate into it; the training loop owns resetting it.
    std::vector<double>& mutable_grad();
    void zero_grad();

    /// Deep copy of values (grad state not copied).
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  private:
    struct Data {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool has_grad = false;
        bool requires_grad = false;
    };
    std::shared_ptr<Data> d_;

    explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}
};

/// Records one backward rule per forward op, in forward order. backward()
/// seeds the loss gradient and replays the rules in exact reverse recording
/// order, which is a valid topological order by construction.
class Tape {
  public:
    /// Append a backward rule together with the tensor the op produced.
    /// Layers outside this module (BatchNorm) use this seam to participate
    /// in the same reverse pass. Op outputs get a fresh gradient buffer on
    /// every backward; only leaves accumulate across passes.
    void record(const Tensor& output, std::function<void()> backward_rule) {
        outputs_.push_back(output);
        nodes_.push_back(std::move(backward_rule));
    }

    /// Accumulate gradients from a scalar loss into every requires_grad leaf
    /// reachable through the recorded ops. Calling it again without
    /// resetting leaf gradients adds another full gradient on top.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }

  private:
    std::vector<Tensor> outputs_;
    std::vector<std::function<void()>> nodes_;
};

// Forward ops. `tape` may be nullptr for inference-only evaluation; a rule is
// recorded only when a tape is given and some input requires gradients.

/// C[m×n] = A[m×k] · B[k×n]. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

/// Row-wise bias add: [B×C] + [C]. The only broadcast the library offers.
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);

/// Elementwise max(x, 0); subgradient at exactly 0 is 0.
Tensor relu(Tape* tape, const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label], stabilized by row-max
/// subtraction. Backward: (softmax - onehot) / B.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

}  // namespace ermpp
