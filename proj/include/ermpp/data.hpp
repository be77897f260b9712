#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ermpp/tensor.hpp"

namespace ermpp {

/// Recipe that regenerates a dataset bit-identically; echoed into every
/// report so results stay traceable to their data.
struct GeneratorSpec {
    std::string family;
    std::vector<std::pair<std::string, std::string>> params;
    uint64_t seed = 0;

    std::string describe() const;
};

struct DomainData {
    std::vector<double> features;  // row-major [n x input_dim]
    std::vector<int> labels;

    int n() const { return static_cast<int>(labels.size()); }
};

class MultiDomainDataset {
  public:
    MultiDomainDataset(std::vector<std::pair<std::string, DomainData>> domains, int num_classes,
                       int input_dim, GeneratorSpec spec);

    const std::vector<std::string>& domain_names() const { return names_; }
    const DomainData& domain(const std::string& name) const;
    bool has_domain(const std::string& name) const { return domains_.count(name) != 0; }
    int num_classes() const { return num_classes_; }
    int input_dim() const { return input_dim_; }
    const GeneratorSpec& generator_spec() const { return spec_; }

  private:
    std::vector<std::string> names_;
    std::map<std::string, DomainData> domains_;
    int num_classes_;
    int input_dim_;
    GeneratorSpec spec_;
};

/// Fixed 2-D Gaussian blobs per class; domain d rotates every feature by
/// d * rotation_step_deg. Class means sit on the unit circle, so two classes
/// land on the x-axis. Deterministic in seed.
MultiDomainDataset make_rotated_blobs(int num_domains, double rotation_step_deg, int num_classes,
                                      int n_per_domain, double noise_sigma, uint64_t seed);

/// Features are [core signal, spurious channel]. The spurious channel equals
/// the label's class value with per-domain probability (1 + corr) / 2 and a
/// uniformly chosen other class's value otherwise. One correlation per
/// domain; a held-out domain is typically given a flipped correlation.
MultiDomainDataset make_spurious_blobs(const std::vector<double>& spurious_corr, int num_classes,
                                       int n_per_domain, double noise_sigma, uint64_t seed);

/// Per-domain index lists; within each domain train and val are disjoint and
/// cover all indices, with |val| = round(fraction * N_d).
struct SplitDataset {
    std::map<std::string, std::vector<int>> train;
    std::map<std::string, std::vector<int>> val;
    double fraction = 0.0;
};

SplitDataset split(const MultiDomainDataset& ds, double fraction, uint64_t seed);

struct DomainBatch {
    Tensor x;
    std::vector<int> y;
    std::map<std::string, int> composition;
};

class BatchIterator {
  public:
    virtual ~BatchIterator() = default;
    virtual DomainBatch next() = 0;
};

using DomainPool = std::map<std::string, std::vector<int>>;

/// Every batch holds exactly per_domain_batch samples from each source
/// domain. Domains cycle independently and reshuffle on exhaustion, which
/// oversamples small domains.
class BalancedBatchIterator final : public BatchIterator {
  public:
    BalancedBatchIterator(const MultiDomainDataset& ds, std::vector<std::string> sources,
                          int per_domain_batch, uint64_t seed, const DomainPool* pool = nullptr);

    DomainBatch next() override;

  private:
    struct DomainCursor {
        std::vector<int> indices;
        std::vector<int> order;
        size_t pos = 0;
        std::mt19937_64 rng;
    };

    const MultiDomainDataset& ds_;
    std::vector<std::string> sources_;
    int per_domain_batch_;
    std::map<std::string, DomainCursor> cursors_;
};

/// Every batch slot is an independent uniform draw from the pooled source
/// data, so the domain composition varies stochastically.
class ResampledBatchIterator final : public BatchIterator {
  public:
    ResampledBatchIterator(const MultiDomainDataset& ds, std::vector<std::string> sources,
                           int total_batch, uint64_t seed, const DomainPool* pool = nullptr);

    DomainBatch next() override;

  private:
    const MultiDomainDataset& ds_;
    std::vector<std::string> sources_;
    std::vector<std::pair<int, int>> pooled_;  // (source index, sample index)
    int total_batch_;
    std::mt19937_64 rng_;
};

/// Pool of all samples of the listed domains (optionally restricted to an
/// index subset) materialized as one tensor, for evaluation.
struct PooledData {
    Tensor x;
    std::vector<int> y;
};

PooledData pool_domains(const MultiDomainDataset& ds, const std::vector<std::string>& domains,
                        const DomainPool* pool = nullptr);

/// Columnar binary with the same header discipline as checkpoints.
void save_dataset(const MultiDomainDataset& ds, const std::string& path);
MultiDomainDataset load_dataset(const std::string& path);

}  // namespace ermpp
