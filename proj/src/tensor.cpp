#include "ermpp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ermpp {

namespace {

int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must be non-empty");
    }
    int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw ShapeError("tensor extents must be positive, got " + std::to_string(e));
        }
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = checked_numel(shape);
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values.assign(static_cast<size_t>(n), 0.0);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    auto n = checked_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

int Tensor::rows() const {
    if (d_->shape.size() != 2) {
        throw ShapeError("expected a matrix, got shape " + shape_str(d_->shape));
    }
    return d_->shape[0];
}

int Tensor::cols() const {
    if (d_->shape.size() != 2) {
        throw ShapeError("expected a matrix, got shape " + shape_str(d_->shape));
    }
    return d_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item() requires a scalar tensor, got shape " + shape_str(d_->shape));
    }
    return d_->values[0];
}

const std::vector<double>& Tensor::grad() const {
    if (!d_->has_grad) {
        throw ContractError("tensor has no gradient; run backward first");
    }
    return d_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    if (!d_->has_grad) {
        d_->grad.assign(d_->values.size(), 0.0);
        d_->has_grad = true;
    }
    return d_->grad;
}

void Tensor::zero_grad() {
    d_->grad.clear();
    d_->has_grad = false;
}

Tensor Tensor::clone() const {
    return from(d_->shape, d_->values, d_->requires_grad);
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got " +
                            std::to_string(loss.size()) + " elements");
    }
    // Op outputs restart from zero every pass; leaves keep accumulating.
    for (auto& out : outputs_) {
        out.zero_grad();
    }
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols();
    const int kb = b.rows(), n = b.cols();
    if (k != kb) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av[static_cast<size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bv.data() + static_cast<size_t>(kk) * n;
            double* orow = ov.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (tape && out.requires_grad()) {
        Tensor ta = a, tb = b, to = out;
        tape->record(out, [ta, tb, to, m, k, n]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.grad();
            const auto& av2 = ta.values();
            const auto& bv2 = tb.values();
            if (ta.requires_grad()) {
                auto& da = ta.mutable_grad();
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = g.data() + static_cast<size_t>(i) * n;
                        const double* brow = bv2.data() + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[static_cast<size_t>(i) * k + kk] += acc;
                    }
                }
            }
            if (tb.requires_grad()) {
                auto& db = tb.mutable_grad();
                for (int kk = 0; kk < k; ++kk) {
                    for (int i = 0; i < m; ++i) {
                        const double aik = av2[static_cast<size_t>(i) * k + kk];
                        if (aik == 0.0) continue;
                        const double* grow = g.data() + static_cast<size_t>(i) * n;
                        double* drow = db.data() + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) drow[j] += aik * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    const int batch = x.rows(), c = x.cols();
    if (bias.shape().size() != 1 || bias.shape()[0] != c) {
        throw ShapeError("bias shape " + shape_str(bias.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros({batch, c});
    const auto& xv = x.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (int i = 0; i < batch; ++i) {
        for (int j = 0; j < c; ++j) {
            ov[static_cast<size_t>(i) * c + j] = xv[static_cast<size_t>(i) * c + j] + bv[j];
        }
    }
    out.set_requires_grad(x.requires_grad() || bias.requires_grad());
    if (tape && out.requires_grad()) {
        Tensor tx = x, tb = bias, to = out;
        tape->record(out, [tx, tb, to, batch, c]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.grad();
            if (tx.requires_grad()) {
                auto& dx = tx.mutable_grad();
                for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            }
            if (tb.requires_grad()) {
                auto& db = tb.mutable_grad();
                for (int i = 0; i < batch; ++i) {
                    for (int j = 0; j < c; ++j) db[j] += g[static_cast<size_t>(i) * c + j];
                }
            }
        });
    }
    return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (size_t i = 0; i < xv.size(); ++i) {
        ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    }
    out.set_requires_grad(x.requires_grad());
    if (tape && out.requires_grad()) {
        Tensor tx = x, to = out;
        tape->record(out, [tx, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.grad();
            const auto& xv2 = tx.values();
            auto& dx = tx.mutable_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                if (xv2[i] > 0.0) dx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
    const int batch = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != batch) {
        throw ShapeError("label count " + std::to_string(labels.size()) +
                         " does not match batch size " + std::to_string(batch));
    }
    for (int i = 0; i < batch; ++i) {
        if (labels[i] < 0 || labels[i] >= c) {
            throw IndexError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                             " outside [0, " + std::to_string(c) + ")");
        }
    }
    // Row-max subtraction keeps exp() finite for any finite logits.
    std::vector<double> probs(static_cast<size_t>(batch) * c);
    const auto& zv = logits.values();
    double total = 0.0;
    for (int i = 0; i < batch; ++i) {
        const double* row = zv.data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        double* prow = probs.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= denom;
        total += -(row[labels[i]] - mx - std::log(denom));
    }
    Tensor out = Tensor::scalar(total / batch);
    out.set_requires_grad(logits.requires_grad());
    if (tape && out.requires_grad()) {
        Tensor tz = logits, to = out;
        tape->record(out, [tz, to, probs = std::move(probs), labels, batch, c]() mutable {
            if (!to.has_grad()) return;
            const double g = to.grad()[0];
            auto& dz = tz.mutable_grad();
            const double scale = g / batch;
            for (int i = 0; i < batch; ++i) {
                const double* prow = probs.data() + static_cast<size_t>(i) * c;
                double* drow = dz.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    drow[j] += scale * (prow[j] - (j == labels[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

}  // namespace ermpp
