#include "ermpp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "binio.hpp"
#include "ermpp/rng.hpp"

namespace ermpp {

std::string GeneratorSpec::describe() const {
    std::ostringstream os;
    os << "family=" << family << " seed=" << seed;
    for (const auto& [k, v] : params) {
        os << " " << k << "=" << v;
    }
    return os.str();
}

MultiDomainDataset::MultiDomainDataset(std::vector<std::pair<std::string, DomainData>> domains,
                                       int num_classes, int input_dim, GeneratorSpec spec)
    : num_classes_(num_classes), input_dim_(input_dim), spec_(std::move(spec)) {
    if (domains.empty()) {
        throw ContractError("dataset needs at least one domain");
    }
    for (auto& [name, data] : domains) {
        if (data.labels.empty()) {
            throw ContractError("domain '" + name + "' is empty");
        }
        if (data.features.size() != data.labels.size() * static_cast<size_t>(input_dim)) {
            throw ShapeError("domain '" + name + "' feature array does not match input_dim");
        }
        for (int y : data.labels) {
            if (y < 0 || y >= num_classes) {
                throw IndexError("domain '" + name + "' has label " + std::to_string(y) +
                                 " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
        names_.push_back(name);
        domains_.emplace(name, std::move(data));
    }
}

const DomainData& MultiDomainDataset::domain(const std::string& name) const {
    auto it = domains_.find(name);
    if (it == domains_.end()) {
        throw IndexError("unknown domain: " + name);
    }
    return it->second;
}

MultiDomainDataset make_rotated_blobs(int num_domains, double rotation_step_deg, int num_classes,
                                      int n_per_domain, double noise_sigma, uint64_t seed) {
    if (num_domains < 3) {
        throw ContractError("rotated blobs need at least 3 domains");
    }
    if (num_classes < 2) {
        throw ContractError("rotated blobs need at least 2 classes");
    }
    if (noise_sigma <= 0.0) {
        throw ContractError("noise_sigma must be positive");
    }
    if (n_per_domain < 1) {
        throw ContractError("n_per_domain must be >= 1");
    }
    std::vector<std::pair<std::string, DomainData>> domains;
    for (int d = 0; d < num_domains; ++d) {
        auto rng = make_rng(derive_seed(seed, "rotated.domain." + std::to_string(d)));
        std::normal_distribution<double> noise(0.0, noise_sigma);
        const double theta = d * rotation_step_deg * std::numbers::pi / 180.0;
        const double ct = std::cos(theta), st = std::sin(theta);
        DomainData data;
        data.features.reserve(static_cast<size_t>(n_per_domain) * 2);
        data.labels.reserve(n_per_domain);
        for (int i = 0; i < n_per_domain; ++i) {
            const int y = i % num_classes;
            const double phi = 2.0 * std::numbers::pi * y / num_classes;
            const double px = std::cos(phi) + noise(rng);
            const double py = std::sin(phi) + noise(rng);
            data.features.push_back(ct * px - st * py);
            data.features.push_back(st * px + ct * py);
            data.labels.push_back(y);
        }
        domains.emplace_back("rot" + std::to_string(d), std::move(data));
    }
    GeneratorSpec spec{"rotated_blobs",
                       {{"num_domains", std::to_string(num_domains)},
                        {"rotation_step_deg", std::to_string(rotation_step_deg)},
                        {"num_classes", std::to_string(num_classes)},
                        {"n_per_domain", std::to_string(n_per_domain)},
                        {"noise_sigma", std::to_string(noise_sigma)}},
                       seed};
    return MultiDomainDataset(std::move(domains), num_classes, 2, std::move(spec));
}

MultiDomainDataset make_spurious_blobs(const std::vector<double>& spurious_corr, int num_classes,
                                       int n_per_domain, double noise_sigma, uint64_t seed) {
    if (spurious_corr.size() < 2) {
        throw ContractError("spurious blobs need at least 2 domains (one correlation each)");
    }
    if (num_classes < 2) {
        throw ContractError("spurious blobs need at least 2 classes");
    }
    if (noise_sigma <= 0.0) {
        throw ContractError("noise_sigma must be positive");
    }
    if (n_per_domain < 1) {
        throw ContractError("n_per_domain must be >= 1");
    }
    for (double c : spurious_corr) {
        if (c < -1.0 || c > 1.0) {
            throw ContractError("spurious correlation " + std::to_string(c) +
                                " outside [-1, 1]");
        }
    }
    auto class_value = [num_classes](int y) {
        return -1.0 + 2.0 * y / (num_classes - 1);
    };
    std::vector<std::pair<std::string, DomainData>> domains;
    for (size_t d = 0; d < spurious_corr.size(); ++d) {
        auto rng = make_rng(derive_seed(seed, "spurious.domain." + std::to_string(d)));
        std::normal_distribution<double> noise(0.0, noise_sigma);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<int> other(0, num_classes - 2);
        const double agree_prob = (1.0 + spurious_corr[d]) / 2.0;
        DomainData data;
        data.features.reserve(static_cast<size_t>(n_per_domain) * 2);
        data.labels.reserve(n_per_domain);
        for (int i = 0; i < n_per_domain; ++i) {
            const int y = i % num_classes;
            const double core = class_value(y) + noise(rng);
            int sy = y;
            if (unit(rng) >= agree_prob) {
                const int o = other(rng);
                sy = o >= y ? o + 1 : o;
            }
            data.features.push_back(core);
            data.features.push_back(class_value(sy));
            data.labels.push_back(y);
        }
        domains.emplace_back("spu" + std::to_string(d), std::move(data));
    }
    std::ostringstream corr_str;
    for (size_t i = 0; i < spurious_corr.size(); ++i) {
        if (i) corr_str << ",";
        corr_str << spurious_corr[i];
    }
    GeneratorSpec spec{"spurious_blobs",
                       {{"spurious_corr", corr_str.str()},
                        {"num_classes", std::to_string(num_classes)},
                        {"n_per_domain", std::to_string(n_per_domain)},
                        {"noise_sigma", std::to_string(noise_sigma)}},
                       seed};
    return MultiDomainDataset(std::move(domains), num_classes, 2, std::move(spec));
}

SplitDataset split(const MultiDomainDataset& ds, double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) {
        throw ContractError("split fraction must lie in (0, 1)");
    }
    SplitDataset out;
    out.fraction = fraction;
    for (const auto& name : ds.domain_names()) {
        const int n = ds.domain(name).n();
        const int n_val = static_cast<int>(std::lround(fraction * n));
        if (n_val == 0 || n_val == n) {
            throw ContractError("split fraction " + std::to_string(fraction) +
                                " leaves an empty side for domain '" + name + "' (n=" +
                                std::to_string(n) + ")");
        }
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        auto rng = make_rng(derive_seed(seed, "split." + name));
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<int> val(idx.begin(), idx.begin() + n_val);
        std::vector<int> train(idx.begin() + n_val, idx.end());
        std::sort(val.begin(), val.end());
        std::sort(train.begin(), train.end());
        out.val[name] = std::move(val);
        out.train[name] = std::move(train);
    }
    return out;
}

namespace {

std::vector<int> full_index_range(int n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void copy_row(const MultiDomainDataset& ds, const std::string& domain, int sample,
              std::vector<double>& dst, std::vector<int>& labels) {
    const auto& data = ds.domain(domain);
    const int dim = ds.input_dim();
    const double* row = data.features.data() + static_cast<size_t>(sample) * dim;
    dst.insert(dst.end(), row, row + dim);
    labels.push_back(data.labels[sample]);
}

}  // namespace

BalancedBatchIterator::BalancedBatchIterator(const MultiDomainDataset& ds,
                                             std::vector<std::string> sources,
                                             int per_domain_batch, uint64_t seed,
                                             const DomainPool* pool)
    : ds_(ds), sources_(std::move(sources)), per_domain_batch_(per_domain_batch) {
    if (per_domain_batch_ < 1) {
        throw ContractError("per_domain_batch must be >= 1");
    }
    if (sources_.empty()) {
        throw ContractError("balanced sampler needs at least one source domain");
    }
    // Per-domain streams derive from the source position, not the name, so
    // identical data under different names cycles identically.
    for (size_t s = 0; s < sources_.size(); ++s) {
        const auto& name = sources_[s];
        DomainCursor cur;
        cur.indices = pool ? pool->at(name) : full_index_range(ds_.domain(name).n());
        if (cur.indices.empty()) {
            throw ContractError("source domain '" + name + "' has no samples to draw from");
        }
        cur.order = full_index_range(static_cast<int>(cur.indices.size()));
        cur.rng = make_rng(derive_seed(seed, "balanced." + std::to_string(s)));
        std::shuffle(cur.order.begin(), cur.order.end(), cur.rng);
        cursors_.emplace(name, std::move(cur));
    }
}

DomainBatch BalancedBatchIterator::next() {
    const int dim = ds_.input_dim();
    const int total = per_domain_batch_ * static_cast<int>(sources_.size());
    std::vector<double> rows;
    rows.reserve(static_cast<size_t>(total) * dim);
    std::vector<int> labels;
    labels.reserve(total);
    DomainBatch batch;
    for (const auto& name : sources_) {
        auto& cur = cursors_.at(name);
        for (int k = 0; k < per_domain_batch_; ++k) {
            if (cur.pos == cur.order.size()) {
                std::shuffle(cur.order.begin(), cur.order.end(), cur.rng);
                cur.pos = 0;
            }
            copy_row(ds_, name, cur.indices[cur.order[cur.pos++]], rows, labels);
        }
        batch.composition[name] = per_domain_batch_;
    }
    batch.x = Tensor::from({total, dim}, std::move(rows));
    batch.y = std::move(labels);
    return batch;
}

ResampledBatchIterator::ResampledBatchIterator(const MultiDomainDataset& ds,
                                               std::vector<std::string> sources, int total_batch,
                                               uint64_t seed, const DomainPool* pool)
    : ds_(ds), sources_(std::move(sources)), total_batch_(total_batch),
      rng_(make_rng(derive_seed(seed, "resampled"))) {
    if (total_batch_ < 1) {
        throw ContractError("total_batch must be >= 1");
    }
    for (size_t s = 0; s < sources_.size(); ++s) {
        const auto indices =
            pool ? pool->at(sources_[s]) : full_index_range(ds_.domain(sources_[s]).n());
        for (int i : indices) {
            pooled_.emplace_back(static_cast<int>(s), i);
        }
    }
    if (pooled_.empty()) {
        throw ContractError("resampled sampler has an empty pool");
    }
}

DomainBatch ResampledBatchIterator::next() {
    const int dim = ds_.input_dim();
    std::vector<double> rows;
    rows.reserve(static_cast<size_t>(total_batch_) * dim);
    std::vector<int> labels;
    labels.reserve(total_batch_);
    DomainBatch batch;
    std::uniform_int_distribution<size_t> pick(0, pooled_.size() - 1);
    for (int k = 0; k < total_batch_; ++k) {
        const auto& [s, i] = pooled_[pick(rng_)];
        copy_row(ds_, sources_[s], i, rows, labels);
        batch.composition[sources_[s]] += 1;
    }
    batch.x = Tensor::from({total_batch_, dim}, std::move(rows));
    batch.y = std::move(labels);
    return batch;
}

PooledData pool_domains(const MultiDomainDataset& ds, const std::vector<std::string>& domains,
                        const DomainPool* pool) {
    const int dim = ds.input_dim();
    std::vector<double> rows;
    std::vector<int> labels;
    for (const auto& name : domains) {
        const auto indices = pool ? pool->at(name) : full_index_range(ds.domain(name).n());
        for (int i : indices) {
            copy_row(ds, name, i, rows, labels);
        }
    }
    if (labels.empty()) {
        throw ContractError("pooled evaluation set is empty");
    }
    PooledData out;
    out.x = Tensor::from({static_cast<int>(labels.size()), dim}, std::move(rows));
    out.y = std::move(labels);
    return out;
}

namespace {
constexpr char kDataMagic[] = "EMPPDATA";
constexpr uint32_t kDataVersion = 1;
}  // namespace

void save_dataset(const MultiDomainDataset& ds, const std::string& path) {
    binio::Writer w;
    for (const char* p = kDataMagic; *p; ++p) w.u8(static_cast<uint8_t>(*p));
    w.u32(kDataVersion);
    const auto& spec = ds.generator_spec();
    w.str(spec.family);
    w.u64(spec.seed);
    w.u32(static_cast<uint32_t>(spec.params.size()));
    for (const auto& [k, v] : spec.params) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<uint32_t>(ds.num_classes()));
    w.u32(static_cast<uint32_t>(ds.input_dim()));
    w.u32(static_cast<uint32_t>(ds.domain_names().size()));
    for (const auto& name : ds.domain_names()) {
        const auto& data = ds.domain(name);
        w.str(name);
        w.f64_array(data.features);
        w.i32_array(data.labels);
    }
    binio::write_file(path, binio::finish_with_crc(w));
}

MultiDomainDataset load_dataset(const std::string& path) {
    std::string bytes = binio::read_file(path, "dataset");
    const size_t magic_len = sizeof(kDataMagic) - 1;
    if (bytes.size() < magic_len || bytes.compare(0, magic_len, kDataMagic) != 0) {
        throw FileFormatError("not a dataset file (bad magic): " + path);
    }
    bytes = binio::check_crc(std::move(bytes), "dataset");
    binio::Reader r(std::move(bytes), "dataset");
    for (size_t i = 0; i < magic_len; ++i) r.u8();
    const uint32_t version = r.u32();
    if (version != kDataVersion) {
        throw FileFormatError("unsupported dataset version " + std::to_string(version));
    }
    GeneratorSpec spec;
    spec.family = r.str();
    spec.seed = r.u64();
    const uint32_t nparams = r.u32();
    for (uint32_t i = 0; i < nparams; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        spec.params.emplace_back(std::move(k), std::move(v));
    }
    const int num_classes = static_cast<int>(r.u32());
    const int input_dim = static_cast<int>(r.u32());
    const uint32_t ndomains = r.u32();
    std::vector<std::pair<std::string, DomainData>> domains;
    for (uint32_t i = 0; i < ndomains; ++i) {
        std::string name = r.str();
        DomainData data;
        data.features = r.f64_array();
        data.labels = r.i32_array();
        domains.emplace_back(std::move(name), std::move(data));
    }
    return MultiDomainDataset(std::move(domains), num_classes, input_dim, std::move(spec));
}

}  // namespace ermpp
