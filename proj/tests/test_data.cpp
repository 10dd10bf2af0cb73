#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "promptfed/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

using namespace promptfed;

namespace {

int nearest_prototype(const Matrix& prototypes, const std::vector<double>& x) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < prototypes.rows(); ++c) {
        double d = 0.0;
        for (int j = 0; j < prototypes.cols(); ++j) {
            const double e = x[j] - prototypes(c, j);
            d += e * e;
        }
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

double oracle_accuracy(const SyntheticData& data) {
    int hit = 0;
    for (const Sample& s : data.test.samples)
        if (nearest_prototype(data.prototypes, s.features) == s.label) ++hit;
    return static_cast<double>(hit) / data.test.samples.size();
}

std::multiset<int> label_multiset(const Dataset& d) {
    std::multiset<int> out;
    for (const Sample& s : d.samples) out.insert(s.label);
    return out;
}

} // namespace

TEST_CASE("generation geometry and split sizes") {
    SyntheticTask task;
    task.num_classes = 6;
    task.feature_dim = 16;
    task.n_per_class = 50;
    task.seed = 3;
    SyntheticData data = generate(task);

    for (int c = 0; c < 6; ++c) {
        double n = 0.0;
        for (int j = 0; j < 16; ++j) n += data.prototypes(c, j) * data.prototypes(c, j);
        CHECK(std::abs(n - 1.0) <= 1e-12);
        for (int p = 0; p < c; ++p) {
            double dot = 0.0;
            for (int j = 0; j < 16; ++j) dot += data.prototypes(c, j) * data.prototypes(p, j);
            CHECK(std::abs(dot) <= 0.5);
        }
    }
    CHECK(data.train.samples.size() == 6 * 40);
    CHECK(data.test.samples.size() == 6 * 10);
    // Stratified: every class contributes 40/10.
    std::vector<int> tr(6, 0), te(6, 0);
    for (const Sample& s : data.train.samples) ++tr[s.label];
    for (const Sample& s : data.test.samples) ++te[s.label];
    for (int c = 0; c < 6; ++c) {
        CHECK(tr[c] == 40);
        CHECK(te[c] == 10);
    }
}

TEST_CASE("zero noise collapses every sample onto its prototype") {
    SyntheticTask task;
    task.num_classes = 4;
    task.feature_dim = 8;
    task.noise_std = 0.0;
    task.n_per_class = 10;
    SyntheticData data = generate(task);
    for (const Sample& s : data.train.samples)
        for (int j = 0; j < 8; ++j) CHECK(s.features[j] == data.prototypes(s.label, j));
    CHECK(oracle_accuracy(data) == 1.0);
}

TEST_CASE("single class gives uniform labels") {
    SyntheticTask task;
    task.num_classes = 1;
    task.feature_dim = 4;
    task.n_per_class = 20;
    SyntheticData data = generate(task);
    for (const Sample& s : data.train.samples) CHECK(s.label == 0);
    for (const Sample& s : data.test.samples) CHECK(s.label == 0);
}

TEST_CASE("benchmark-difficulty task stays separable") {
    SyntheticTask task;
    task.num_classes = 5;
    task.feature_dim = 32;
    task.noise_std = 0.3;
    task.n_per_class = 200;
    for (std::uint64_t seed : {1, 2, 3}) {
        task.seed = seed;
        CHECK(oracle_accuracy(generate(task)) >= 0.95);
    }
}

TEST_CASE("infeasible prototype geometry is reported") {
    SyntheticTask task;
    task.num_classes = 40;
    task.feature_dim = 2;
    task.n_per_class = 5;
    CHECK_THROWS_AS(generate(task), std::runtime_error);
}

TEST_CASE("generation is deterministic in the seed") {
    SyntheticTask task;
    task.num_classes = 3;
    task.feature_dim = 8;
    task.n_per_class = 20;
    task.seed = 9;
    SyntheticData a = generate(task);
    SyntheticData b = generate(task);
    CHECK(frobenius_norm(a.prototypes - b.prototypes) == 0.0);
    REQUIRE(a.train.samples.size() == b.train.samples.size());
    for (std::size_t i = 0; i < a.train.samples.size(); ++i)
        CHECK(a.train.samples[i].features == b.train.samples[i].features);
}

TEST_CASE("pathological partition") {
    SyntheticTask task;
    task.num_classes = 10;
    task.feature_dim = 8;
    task.n_per_class = 30;
    task.seed = 5;
    SyntheticData data = generate(task);

    SUBCASE("single client with all classes gets the whole dataset") {
        std::vector<Dataset> shards = partition_pathological(data.train, 1, 10, 1);
        REQUIRE(shards.size() == 1);
        CHECK(shards[0].samples.size() == data.train.samples.size());
        CHECK(label_multiset(shards[0]) == label_multiset(data.train));
    }

    SUBCASE("five clients, two classes each, disjoint and exhaustive") {
        std::vector<Dataset> shards = partition_pathological(data.train, 5, 2, 7);
        std::set<int> seen;
        std::size_t total = 0;
        for (const Dataset& s : shards) {
            std::set<int> labels;
            for (const Sample& smp : s.samples) labels.insert(smp.label);
            CHECK(labels.size() == 2);
            for (int l : labels) {
                CHECK(seen.count(l) == 0);
                seen.insert(l);
            }
            total += s.samples.size();
        }
        CHECK(total == data.train.samples.size());
        CHECK(seen.size() == 10);
    }

    SUBCASE("leftover classes are dealt round-robin, keeping exhaustiveness") {
        std::vector<Dataset> shards = partition_pathological(data.train, 3, 2, 11);
        std::size_t total = 0;
        std::set<int> seen;
        for (const Dataset& s : shards) {
            total += s.samples.size();
            for (const Sample& smp : s.samples) seen.insert(smp.label);
        }
        CHECK(total == data.train.samples.size());
        CHECK(seen.size() == 10);
    }

    SUBCASE("overcommitted class budget is rejected") {
        CHECK_THROWS_AS(partition_pathological(data.train, 10, 2, 1), std::invalid_argument);
    }

    SUBCASE("deterministic in the seed") {
        std::vector<Dataset> a = partition_pathological(data.train, 5, 2, 13);
        std::vector<Dataset> b = partition_pathological(data.train, 5, 2, 13);
        for (int i = 0; i < 5; ++i) CHECK(label_multiset(a[i]) == label_multiset(b[i]));
    }
}

TEST_CASE("dirichlet partition") {
    SyntheticTask task;
    task.num_classes = 10;
    task.feature_dim = 8;
    task.n_per_class = 100;
    task.seed = 6;
    SyntheticData data = generate(task);

    SUBCASE("single client gets everything") {
        std::vector<Dataset> shards = partition_dirichlet(data.train, 1, 0.3, 1);
        REQUIRE(shards.size() == 1);
        CHECK(label_multiset(shards[0]) == label_multiset(data.train));
    }

    SUBCASE("exact partition, all clients nonempty") {
        std::vector<Dataset> shards = partition_dirichlet(data.train, 10, 0.3, 2);
        std::size_t total = 0;
        for (const Dataset& s : shards) {
            CHECK(!s.samples.empty());
            total += s.samples.size();
        }
        CHECK(total == data.train.samples.size());
    }

    SUBCASE("huge alpha approaches the uniform split") {
        std::vector<Dataset> shards = partition_dirichlet(data.train, 4, 1e6, 3);
        for (const Dataset& s : shards) {
            std::vector<int> hist(10, 0);
            for (const Sample& smp : s.samples) ++hist[smp.label];
            for (int c = 0; c < 10; ++c)
                CHECK(std::abs(hist[c] - 20.0) / 20.0 <= 0.05);
        }
    }

    SUBCASE("alpha 0.3 produces heavy per-class skew") {
        for (std::uint64_t seed : {4, 5, 6}) {
            std::vector<Dataset> shards = partition_dirichlet(data.train, 10, 0.3, seed);
            std::vector<std::vector<int>> hist(10, std::vector<int>(10, 0));
            for (int i = 0; i < 10; ++i)
                for (const Sample& smp : shards[i].samples) ++hist[smp.label][i];
            double mean_max = 0.0;
            for (int c = 0; c < 10; ++c) {
                int mx = 0, tot = 0;
                for (int i = 0; i < 10; ++i) {
                    mx = std::max(mx, hist[c][i]);
                    tot += hist[c][i];
                }
                mean_max += static_cast<double>(mx) / tot;
            }
            CHECK(mean_max / 10.0 >= 0.4);
        }
    }

    SUBCASE("invalid alpha rejected") {
        CHECK_THROWS_AS(partition_dirichlet(data.train, 4, 0.0, 1), std::invalid_argument);
    }
}

TEST_CASE("joint train/test partition shares one assignment") {
    SyntheticTask task;
    task.num_classes = 10;
    task.feature_dim = 8;
    task.n_per_class = 200;
    task.seed = 8;
    SyntheticData data = generate(task);

    PartitionSpec spec;
    spec.num_clients = 5;
    spec.classes_per_client = 2;
    spec.seed = 21;

    SUBCASE("pathological: identical label sets per client") {
        std::vector<ClientShard> shards = partition_task(data.train, data.test, spec);
        for (const ClientShard& s : shards) {
            std::set<int> tr, te;
            for (const Sample& smp : s.train.samples) tr.insert(smp.label);
            for (const Sample& smp : s.test.samples) te.insert(smp.label);
            CHECK(tr == te);
            CHECK(tr.size() == 2);
        }
    }

    SUBCASE("dirichlet: matching class shares within rounding error") {
        spec.mode = PartitionSpec::Mode::dirichlet;
        spec.alpha = 0.3;
        std::vector<ClientShard> shards = partition_task(data.train, data.test, spec);
        std::size_t tr_total = 0, te_total = 0;
        for (const ClientShard& s : shards) {
            CHECK(!s.train.samples.empty());
            CHECK(!s.test.samples.empty());
            tr_total += s.train.samples.size();
            te_total += s.test.samples.size();
            std::vector<int> htr(10, 0), hte(10, 0);
            for (const Sample& smp : s.train.samples) ++htr[smp.label];
            for (const Sample& smp : s.test.samples) ++hte[smp.label];
            for (int c = 0; c < 10; ++c) {
                const double ptr = htr[c] / 160.0; // per-class train pool
                const double pte = hte[c] / 40.0;  // per-class test pool
                CHECK(std::abs(ptr - pte) <= 0.05);
            }
        }
        CHECK(tr_total == data.train.samples.size());
        CHECK(te_total == data.test.samples.size());
    }
}

TEST_CASE("csv round trip is exact") {
    SyntheticTask task;
    task.num_classes = 3;
    task.feature_dim = 7;
    task.n_per_class = 10;
    task.seed = 12;
    SyntheticData data = generate(task);

    const std::string path =
        (std::filesystem::temp_directory_path() / "promptfed_data_roundtrip.csv").string();
    save_dataset_csv(path, data.train);
    Dataset back = load_dataset_csv(path);
    std::filesystem::remove(path);

    CHECK(back.feature_dim == 7);
    CHECK(back.num_classes == 3);
    REQUIRE(back.samples.size() == data.train.samples.size());
    for (std::size_t i = 0; i < back.samples.size(); ++i) {
        CHECK(back.samples[i].label == data.train.samples[i].label);
        CHECK(back.samples[i].features == data.train.samples[i].features);
    }
}
