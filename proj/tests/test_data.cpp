#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ermpp/data.hpp"
#include "ermpp/rng.hpp"

using namespace ermpp;

namespace {

std::pair<double, double> domain_mean(const DomainData& d) {
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < d.n(); ++i) {
        mx += d.features[static_cast<size_t>(i) * 2];
        my += d.features[static_cast<size_t>(i) * 2 + 1];
    }
    return {mx / d.n(), my / d.n()};
}

}  // namespace

TEST_CASE("zero rotation step leaves all domains identically distributed") {
    const double sigma = 0.4;
    const int n = 1200;
    MultiDomainDataset ds = make_rotated_blobs(3, 0.0, 3, n, sigma, 2024);
    const auto [m0x, m0y] = domain_mean(ds.domain("rot0"));
    const auto [m1x, m1y] = domain_mean(ds.domain("rot1"));
    const double bound = 3.0 * sigma / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(m0x - m1x) < bound);
    CHECK(std::abs(m0y - m1y) < bound);
}

TEST_CASE("rotation step of 90 degrees moves class means onto the y-axis") {
    const double sigma = 0.2;
    const int n = 2000;
    MultiDomainDataset ds = make_rotated_blobs(3, 90.0, 2, n, sigma, 7);
    const auto& d1 = ds.domain("rot1");
    double mx = 0.0, my = 0.0;
    int count = 0;
    for (int i = 0; i < d1.n(); ++i) {
        if (d1.labels[i] != 0) continue;
        mx += d1.features[static_cast<size_t>(i) * 2];
        my += d1.features[static_cast<size_t>(i) * 2 + 1];
        ++count;
    }
    mx /= count;
    my /= count;
    const double bound = 3.0 * sigma / std::sqrt(static_cast<double>(count));
    // Class 0 sits at (1, 0) before rotation; rot1 maps it to (0, 1).
    CHECK(std::abs(mx) < bound);
    CHECK(std::abs(my - 1.0) < bound);
}

TEST_CASE("generators are bit-identical under the same seed") {
    MultiDomainDataset a = make_rotated_blobs(4, 15.0, 3, 100, 0.3, 42);
    MultiDomainDataset b = make_rotated_blobs(4, 15.0, 3, 100, 0.3, 42);
    MultiDomainDataset c = make_rotated_blobs(4, 15.0, 3, 100, 0.3, 43);
    for (const auto& name : a.domain_names()) {
        CHECK(a.domain(name).features == b.domain(name).features);
        CHECK(a.domain(name).labels == b.domain(name).labels);
    }
    CHECK(a.domain("rot0").features != c.domain("rot0").features);

    MultiDomainDataset s1 = make_spurious_blobs({0.9, -0.9}, 2, 100, 0.3, 5);
    MultiDomainDataset s2 = make_spurious_blobs({0.9, -0.9}, 2, 100, 0.3, 5);
    CHECK(s1.domain("spu0").features == s2.domain("spu0").features);
}

TEST_CASE("generator contract errors") {
    CHECK_THROWS_AS(make_rotated_blobs(2, 10.0, 2, 50, 0.3, 1), ContractError);
    CHECK_THROWS_AS(make_rotated_blobs(3, 10.0, 1, 50, 0.3, 1), ContractError);
    CHECK_THROWS_AS(make_rotated_blobs(3, 10.0, 2, 50, 0.0, 1), ContractError);
    CHECK_THROWS_AS(make_spurious_blobs({0.5, 1.5}, 2, 50, 0.3, 1), ContractError);
    CHECK_THROWS_AS(make_spurious_blobs({0.5}, 2, 50, 0.3, 1), ContractError);
}

TEST_CASE("full correlation makes the spurious channel a function of the label") {
    MultiDomainDataset ds = make_spurious_blobs({1.0, -1.0}, 2, 400, 0.3, 11);
    const auto& d0 = ds.domain("spu0");
    for (int i = 0; i < d0.n(); ++i) {
        const double expected = d0.labels[i] == 0 ? -1.0 : 1.0;
        CHECK(d0.features[static_cast<size_t>(i) * 2 + 1] == expected);
    }
    // Flipped correlation: the channel always disagrees.
    const auto& d1 = ds.domain("spu1");
    for (int i = 0; i < d1.n(); ++i) {
        const double anti = d1.labels[i] == 0 ? 1.0 : -1.0;
        CHECK(d1.features[static_cast<size_t>(i) * 2 + 1] == anti);
    }
}

TEST_CASE("zero correlation gives about half agreement") {
    const int n = 4000;
    MultiDomainDataset ds = make_spurious_blobs({0.0, 0.0}, 2, n, 0.3, 13);
    const auto& d = ds.domain("spu0");
    int agree = 0;
    for (int i = 0; i < d.n(); ++i) {
        const double expected = d.labels[i] == 0 ? -1.0 : 1.0;
        if (d.features[static_cast<size_t>(i) * 2 + 1] == expected) ++agree;
    }
    const double rate = static_cast<double>(agree) / n;
    CHECK(std::abs(rate - 0.5) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("split yields 80/20 with fraction 0.2 and n=100") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 100, 0.3, 3);
    SplitDataset sp = split(ds, 0.2, 55);
    for (const auto& name : ds.domain_names()) {
        CHECK(sp.train.at(name).size() == 80);
        CHECK(sp.val.at(name).size() == 20);
    }
}

TEST_CASE("split is disjoint and covers every index") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 97, 0.3, 3);
    for (double fraction : {0.1, 0.2, 0.33, 0.5, 0.8}) {
        SplitDataset sp = split(ds, fraction, 99);
        for (const auto& name : ds.domain_names()) {
            std::set<int> train(sp.train.at(name).begin(), sp.train.at(name).end());
            std::set<int> val(sp.val.at(name).begin(), sp.val.at(name).end());
            CHECK(train.size() + val.size() == 97);
            CHECK(static_cast<int>(val.size()) ==
                  static_cast<int>(std::lround(fraction * 97)));
            for (int i : val) CHECK(train.count(i) == 0);
            std::set<int> all = train;
            all.insert(val.begin(), val.end());
            CHECK(all.size() == 97);
            CHECK(*all.begin() == 0);
            CHECK(*all.rbegin() == 96);
        }
    }
}

TEST_CASE("split determinism and contract errors") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 50, 0.3, 3);
    SplitDataset a = split(ds, 0.2, 7);
    SplitDataset b = split(ds, 0.2, 7);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK_THROWS_AS(split(ds, 0.0, 7), ContractError);
    CHECK_THROWS_AS(split(ds, 1.0, 7), ContractError);
    CHECK_THROWS_AS(split(ds, 0.001, 7), ContractError);  // empty val side
}

TEST_CASE("balanced batches hold the exact per-domain composition") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 30, 0.3, 17);
    BalancedBatchIterator it(ds, {"rot0", "rot1", "rot2"}, 4, 21);
    for (int k = 0; k < 50; ++k) {
        DomainBatch batch = it.next();
        CHECK(batch.x.rows() == 12);
        CHECK(batch.y.size() == 12);
        for (const auto& name : ds.domain_names()) {
            CHECK(batch.composition.at(name) == 4);
        }
    }
}

TEST_CASE("a domain of size 5 is oversampled by cycling") {
    // 3 batches of 4 draw 12 samples from 5 elements; cycling guarantees
    // every element appears at least twice.
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 5, 0.3, 19);
    DomainPool pool{{"rot0", {0, 1, 2, 3, 4}}};
    BalancedBatchIterator it(ds, {"rot0"}, 4, 23, &pool);
    std::map<std::string, int> seen;  // feature row fingerprint -> count
    const auto& d = ds.domain("rot0");
    auto fingerprint = [&](const double* row) {
        for (int i = 0; i < 5; ++i) {
            if (d.features[static_cast<size_t>(i) * 2] == row[0] &&
                d.features[static_cast<size_t>(i) * 2 + 1] == row[1]) {
                return std::to_string(i);
            }
        }
        return std::string("?");
    };
    for (int k = 0; k < 3; ++k) {
        DomainBatch batch = it.next();
        for (int r = 0; r < batch.x.rows(); ++r) {
            seen[fingerprint(batch.x.values().data() + static_cast<size_t>(r) * 2)] += 1;
        }
    }
    CHECK(seen.count("?") == 0);
    for (int i = 0; i < 5; ++i) {
        CHECK(seen[std::to_string(i)] >= 2);
    }
}

TEST_CASE("balanced window coverage: every sample appears within one cycle") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 23, 0.3, 29);
    BalancedBatchIterator it(ds, {"rot1"}, 4, 31);
    const auto& d = ds.domain("rot1");
    std::set<std::string> remaining;
    for (int i = 0; i < d.n(); ++i) {
        remaining.insert(std::to_string(d.features[static_cast<size_t>(i) * 2]) + "," +
                         std::to_string(d.features[static_cast<size_t>(i) * 2 + 1]));
    }
    const int window = (d.n() + 3) / 4;  // ceil(N / per_domain_batch)
    for (int k = 0; k < window; ++k) {
        DomainBatch batch = it.next();
        for (int r = 0; r < batch.x.rows(); ++r) {
            remaining.erase(
                std::to_string(batch.x.values()[static_cast<size_t>(r) * 2]) + "," +
                std::to_string(batch.x.values()[static_cast<size_t>(r) * 2 + 1]));
        }
    }
    CHECK(remaining.empty());
}

TEST_CASE("equal seeds give identical batch streams") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 40, 0.3, 37);
    BalancedBatchIterator a(ds, {"rot0", "rot2"}, 3, 41);
    BalancedBatchIterator b(ds, {"rot0", "rot2"}, 3, 41);
    ResampledBatchIterator c(ds, {"rot0", "rot2"}, 10, 43);
    ResampledBatchIterator d(ds, {"rot0", "rot2"}, 10, 43);
    for (int k = 0; k < 20; ++k) {
        DomainBatch ba = a.next(), bb = b.next();
        CHECK(ba.x.values() == bb.x.values());
        CHECK(ba.y == bb.y);
        DomainBatch bc = c.next(), bd = d.next();
        CHECK(bc.x.values() == bd.x.values());
        CHECK(bc.composition == bd.composition);
    }
}

TEST_CASE("resampled batches from a single domain have trivial composition") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 40, 0.3, 47);
    ResampledBatchIterator it(ds, {"rot1"}, 8, 49);
    for (int k = 0; k < 10; ++k) {
        DomainBatch batch = it.next();
        CHECK(batch.composition.size() == 1);
        CHECK(batch.composition.at("rot1") == 8);
    }
}

TEST_CASE("resampled mean per-domain count stays near the binomial expectation") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 500, 0.3, 53);
    ResampledBatchIterator it(ds, {"rot0", "rot1"}, 32, 59);
    const int batches = 10000;
    long total0 = 0;
    for (int k = 0; k < batches; ++k) {
        DomainBatch batch = it.next();
        auto found = batch.composition.find("rot0");
        if (found != batch.composition.end()) total0 += found->second;
    }
    const double mean = static_cast<double>(total0) / batches;
    CHECK(mean > 15.5);
    CHECK(mean < 16.5);
}

TEST_CASE("sampler contract errors") {
    MultiDomainDataset ds = make_rotated_blobs(3, 10.0, 2, 10, 0.3, 61);
    CHECK_THROWS_AS(BalancedBatchIterator(ds, {"rot0"}, 0, 1), ContractError);
    DomainPool empty{{"rot0", {}}};
    CHECK_THROWS_AS(BalancedBatchIterator(ds, {"rot0"}, 4, 1, &empty), ContractError);
    CHECK_THROWS_AS(ResampledBatchIterator(ds, {"rot0"}, 0, 1), ContractError);
    CHECK_THROWS_AS(ResampledBatchIterator(ds, {"rot0"}, 4, 1, &empty), ContractError);
}

TEST_CASE("dataset export/import round trips bit-exactly") {
    MultiDomainDataset ds = make_spurious_blobs({0.8, 0.2, -0.8}, 3, 64, 0.25, 67);
    const auto path = std::filesystem::temp_directory_path() / "ermpp_test_dataset.bin";
    save_dataset(ds, path.string());
    MultiDomainDataset loaded = load_dataset(path.string());
    CHECK(loaded.domain_names() == ds.domain_names());
    CHECK(loaded.num_classes() == ds.num_classes());
    CHECK(loaded.input_dim() == ds.input_dim());
    CHECK(loaded.generator_spec().describe() == ds.generator_spec().describe());
    for (const auto& name : ds.domain_names()) {
        CHECK(loaded.domain(name).features == ds.domain(name).features);
        CHECK(loaded.domain(name).labels == ds.domain(name).labels);
    }
    // Corruption fails the checksum.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    f.put(static_cast<char>(0x7f));
    f.close();
    CHECK_THROWS_AS(load_dataset(path.string()), FileFormatError);
    std::filesystem::remove(path);
}
