#include "ermpp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ermpp/rng.hpp"

namespace ermpp {

void ModelSpec::validate() const {
    if (input_dim < 1) {
        throw ConfigError("model input_dim must be >= 1");
    }
    if (num_classes < 1) {
        throw ConfigError("model num_classes must be >= 1");
    }
    for (int h : hidden_dims) {
        if (h < 1) {
            throw ConfigError("model hidden dims must be >= 1");
        }
    }
}

uint64_t ModelSpec::hash() const {
    std::ostringstream os;
    os << "in=" << input_dim << ";hidden=";
    for (size_t i = 0; i < hidden_dims.size(); ++i) {
        if (i) os << ",";
        os << hidden_dims[i];
    }
    os << ";classes=" << num_classes << ";bn=" << (use_batchnorm ? 1 : 0);
    return fnv1a(os.str());
}

void require_same_keys(const ModelState& a, const ModelState& b) {
    auto diff = [](const auto& lhs, const auto& rhs, std::vector<std::string>& out) {
        for (const auto& [k, v] : lhs) {
            if (!rhs.count(k)) out.push_back(k);
        }
    };
    std::vector<std::string> only_a, only_b;
    diff(a.params, b.params, only_a);
    diff(b.params, a.params, only_b);
    diff(a.bn_stats, b.bn_stats, only_a);
    diff(b.bn_stats, a.bn_stats, only_b);
    if (only_a.empty() && only_b.empty()) return;
    std::ostringstream os;
    os << "model state key sets differ;";
    if (!only_a.empty()) {
        os << " only in first:";
        for (const auto& k : only_a) os << " " << k;
    }
    if (!only_b.empty()) {
        os << " only in second:";
        for (const auto& k : only_b) os << " " << k;
    }
    throw ArchitectureError(os.str());
}

LinearLayer::LinearLayer(int in_dim, int out_dim, uint64_t seed) {
    auto rng = make_rng(seed);
    const double bound = std::sqrt(6.0 / in_dim);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(static_cast<size_t>(in_dim) * out_dim);
    for (auto& v : w) v = dist(rng);
    weight = Tensor::from({in_dim, out_dim}, std::move(w), /*requires_grad=*/true);
    bias = Tensor::zeros({out_dim}, /*requires_grad=*/true);
}

Tensor LinearLayer::forward(Tape* tape, const Tensor& x) const {
    return add_bias(tape, matmul(tape, x, weight), bias);
}

BatchNormLayer::BatchNormLayer(int channels) {
    gamma = Tensor::full({channels}, 1.0, /*requires_grad=*/true);
    beta = Tensor::zeros({channels}, /*requires_grad=*/true);
    running_mean.assign(static_cast<size_t>(channels), 0.0);
    running_var.assign(static_cast<size_t>(channels), 1.0);
}

Tensor BatchNormLayer::forward(Tape* tape, const Tensor& x, RunMode mode) {
    const int batch = x.rows();
    const int c = x.cols();
    if (c != channels()) {
        throw ShapeError("batchnorm channel mismatch: input has " + std::to_string(c) +
                         ", layer has " + std::to_string(channels()));
    }
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    Tensor out = Tensor::zeros({batch, c});
    auto& ov = out.values();

    if (mode == RunMode::Eval) {
        for (int j = 0; j < c; ++j) {
            const double inv = 1.0 / std::sqrt(running_var[j] + eps);
            for (int i = 0; i < batch; ++i) {
                const size_t idx = static_cast<size_t>(i) * c + j;
                ov[idx] = gv[j] * (xv[idx] - running_mean[j]) * inv + bv[j];
            }
        }
        return out;
    }

    if (batch < 2) {
        throw ContractError("batchnorm training forward requires batch size >= 2, got " +
                            std::to_string(batch));
    }

    std::vector<double> mean(c, 0.0), var(c, 0.0), inv(c, 0.0);
    std::vector<double> xhat(static_cast<size_t>(batch) * c);
    for (int j = 0; j < c; ++j) {
        double m = 0.0;
        for (int i = 0; i < batch; ++i) m += xv[static_cast<size_t>(i) * c + j];
        m /= batch;
        double v = 0.0;
        for (int i = 0; i < batch; ++i) {
            const double d = xv[static_cast<size_t>(i) * c + j] - m;
            v += d * d;
        }
        v /= batch;  // biased, used for normalization
        mean[j] = m;
        var[j] = v;
        inv[j] = 1.0 / std::sqrt(v + eps);
        for (int i = 0; i < batch; ++i) {
            const size_t idx = static_cast<size_t>(i) * c + j;
            xhat[idx] = (xv[idx] - m) * inv[j];
            ov[idx] = gv[j] * xhat[idx] + bv[j];
        }
    }

    if (!frozen) {
        const double unbias = static_cast<double>(batch) / (batch - 1);
        for (int j = 0; j < c; ++j) {
            running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
            running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
        }
    }

    out.set_requires_grad(x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    if (tape && out.requires_grad()) {
        Tensor tx = x, tg = gamma, tb = beta, to = out;
        tape->record(out, [tx, tg, tb, to, xhat = std::move(xhat), inv = std::move(inv),
                           batch, c]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.grad();
            const auto& gv2 = tg.values();
            if (tb.requires_grad()) {
                auto& db = tb.mutable_grad();
                for (int i = 0; i < batch; ++i) {
                    for (int j = 0; j < c; ++j) db[j] += g[static_cast<size_t>(i) * c + j];
                }
            }
            if (tg.requires_grad()) {
                auto& dg = tg.mutable_grad();
                for (int i = 0; i < batch; ++i) {
                    for (int j = 0; j < c; ++j) {
                        const size_t idx = static_cast<size_t>(i) * c + j;
                        dg[j] += g[idx] * xhat[idx];
                    }
                }
            }
            if (tx.requires_grad()) {
                auto& dx = tx.mutable_grad();
                // dx through the batch statistics:
                // dx_i = inv/B * (B*dxh_i - sum(dxh) - xh_i * sum(dxh*xh))
                for (int j = 0; j < c; ++j) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int i = 0; i < batch; ++i) {
                        const size_t idx = static_cast<size_t>(i) * c + j;
                        const double dxh = g[idx] * gv2[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[idx];
                    }
                    for (int i = 0; i < batch; ++i) {
                        const size_t idx = static_cast<size_t>(i) * c + j;
                        const double dxh = g[idx] * gv2[j];
                        dx[idx] += inv[j] / batch * (batch * dxh - sum_dxh - xhat[idx] * sum_dxh_xh);
                    }
                }
            }
        });
    }
    return out;
}

namespace {

std::string block_prefix(int i) {
    return "backbone." + std::to_string(i);
}

}  // namespace

Model::Model(const ModelSpec& spec, uint64_t init_seed)
    : spec_(spec),
      head_(spec.hidden_dims.empty() ? spec.input_dim : spec.hidden_dims.back(), spec.num_classes,
            derive_seed(init_seed, "init.head")) {
    spec_.validate();
    int prev = spec_.input_dim;
    for (size_t i = 0; i < spec_.hidden_dims.size(); ++i) {
        const int h = spec_.hidden_dims[i];
        Block b{LinearLayer(prev, h, derive_seed(init_seed, "init." + block_prefix(static_cast<int>(i)))),
                std::nullopt};
        if (spec_.use_batchnorm) {
            b.bn.emplace(h);
        }
        blocks_.push_back(std::move(b));
        prev = h;
    }
}

Tensor Model::forward(Tape* tape, const Tensor& x, RunMode mode) {
    if (x.cols() != spec_.input_dim) {
        throw ShapeError("model expects input dim " + std::to_string(spec_.input_dim) + ", got " +
                         std::to_string(x.cols()));
    }
    Tensor h = x;
    for (auto& block : blocks_) {
        h = block.linear.forward(tape, h);
        if (block.bn) {
            h = block.bn->forward(tape, h, mode);
        }
        h = relu(tape, h);
    }
    return head_.forward(tape, h);
}

ModelState Model::extract_state() const {
    ModelState s;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto prefix = block_prefix(static_cast<int>(i));
        s.params[prefix + ".linear.weight"] = blocks_[i].linear.weight.values();
        s.params[prefix + ".linear.bias"] = blocks_[i].linear.bias.values();
        if (blocks_[i].bn) {
            s.params[prefix + ".bn.gamma"] = blocks_[i].bn->gamma.values();
            s.params[prefix + ".bn.beta"] = blocks_[i].bn->beta.values();
            s.bn_stats[prefix + ".bn"] = BnStats{blocks_[i].bn->running_mean,
                                                 blocks_[i].bn->running_var};
        }
    }
    s.params["head.weight"] = head_.weight.values();
    s.params["head.bias"] = head_.bias.values();
    s.step = step_;
    return s;
}

void Model::inject_state(const ModelState& s) {
    require_same_keys(extract_state(), s);
    inject_params(s.params);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].bn) {
            const auto& st = s.bn_stats.at(block_prefix(static_cast<int>(i)) + ".bn");
            blocks_[i].bn->running_mean = st.mean;
            blocks_[i].bn->running_var = st.var;
        }
    }
    step_ = s.step;
}

void Model::inject_params(const std::map<std::string, std::vector<double>>& params) {
    auto named = named_parameters();
    for (auto& [name, tensor] : named) {
        auto it = params.find(name);
        if (it == params.end()) {
            throw ArchitectureError("missing parameter in injected state: " + name);
        }
        if (it->second.size() != tensor.values().size()) {
            throw ArchitectureError("parameter size mismatch for " + name);
        }
        tensor.values() = it->second;
    }
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto prefix = block_prefix(static_cast<int>(i));
        out.emplace_back(prefix + ".linear.weight", blocks_[i].linear.weight);
        out.emplace_back(prefix + ".linear.bias", blocks_[i].linear.bias);
        if (blocks_[i].bn) {
            out.emplace_back(prefix + ".bn.gamma", blocks_[i].bn->gamma);
            out.emplace_back(prefix + ".bn.beta", blocks_[i].bn->beta);
        }
    }
    out.emplace_back("head.weight", head_.weight);
    out.emplace_back("head.bias", head_.bias);
    return out;
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto prefix = block_prefix(static_cast<int>(i));
        out.push_back(prefix + ".linear.weight");
        out.push_back(prefix + ".linear.bias");
        if (blocks_[i].bn) {
            out.push_back(prefix + ".bn.gamma");
            out.push_back(prefix + ".bn.beta");
        }
    }
    out.push_back("head.weight");
    out.push_back("head.bias");
    return out;
}

std::vector<std::string> Model::head_parameter_names() const {
    return {"head.weight", "head.bias"};
}

void Model::set_bn_frozen(bool frozen) {
    for (auto& block : blocks_) {
        if (block.bn) block.bn->frozen = frozen;
    }
}

bool Model::bn_frozen() const {
    for (const auto& block : blocks_) {
        if (block.bn) return block.bn->frozen;
    }
    return false;
}

double evaluate_accuracy(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                         const std::vector<int>& labels) {
    Model m(spec, /*init_seed=*/0);
    m.inject_state(state);
    Tensor logits = m.forward(nullptr, x, RunMode::Eval);
    const int batch = logits.rows(), c = logits.cols();
    int correct = 0;
    for (int i = 0; i < batch; ++i) {
        const double* row = logits.values().data() + static_cast<size_t>(i) * c;
        int arg = 0;
        for (int j = 1; j < c; ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        if (arg == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / batch;
}

}  // namespace ermpp
