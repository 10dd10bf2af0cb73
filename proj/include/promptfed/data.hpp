#pragma once

#include "promptfed/matrix.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace promptfed {

struct Sample {
    std::vector<double> features;
    int label = 0;
};

struct Dataset {
    int feature_dim = 0;
    int num_classes = 0;
    std::vector<Sample> samples;
};

struct SyntheticTask {
    int num_classes = 20;
    int feature_dim = 32;
    double noise_std = 0.3;
    int n_per_class = 200;
    std::uint64_t seed = 0;
};

// Unit prototypes with pairwise |cosine| <= 0.5 plus Gaussian class clouds,
// stratified 80/20 into train and test.
struct SyntheticData {
    Matrix prototypes;  // L x m
    Dataset train;
    Dataset test;
};

SyntheticData generate(const SyntheticTask& task);

struct PartitionSpec {
    enum class Mode { pathological, dirichlet };
    Mode mode = Mode::pathological;
    int num_clients = 10;
    int classes_per_client = 2;  // pathological only
    double alpha = 0.3;          // dirichlet only
    std::uint64_t seed = 0;
};

struct ClientShard {
    Dataset train;
    Dataset test;
};

// Disjoint class groups of size k per client; requires k*M <= L. Classes left
// over when k*M < L are dealt round-robin so the shards stay exhaustive.
std::vector<Dataset> partition_pathological(const Dataset& data, int num_clients,
                                            int classes_per_client, std::uint64_t seed);

// Per-class client proportions ~ Dirichlet(alpha), largest-remainder rounding,
// retried with an incremented sub-seed (up to 100) until every client is
// nonempty.
std::vector<Dataset> partition_dirichlet(const Dataset& data, int num_clients, double alpha,
                                         std::uint64_t seed);

// Partitions train and test with one shared per-class assignment so each
// client's test composition matches its train composition.
std::vector<ClientShard> partition_task(const Dataset& train, const Dataset& test,
                                        const PartitionSpec& spec);

// CSV round-trip, header `label,f0,...,f{m-1}`, 17 significant digits.
void save_dataset_csv(const std::string& path, const Dataset& data);
Dataset load_dataset_csv(const std::string& path);

} // namespace promptfed
