#include "promptfed/data.hpp"
#include "promptfed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace promptfed {

namespace {

double sample_gamma(RngStream& rng, double alpha) {
    if (alpha < 1.0) {
        double u;
        do u = rng.next_uniform();
        while (u == 0.0);
        return sample_gamma(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze method.
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
        const double x = rng.next_gaussian();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.next_uniform();
        if (u == 0.0) continue;
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

// Splits n items into per-client counts proportional to props, largest
// remainders first, ties broken by client index.
std::vector<int> largest_remainder_counts(const std::vector<double>& props, int n) {
    const int m = static_cast<int>(props.size());
    std::vector<int> counts(m);
    std::vector<std::pair<double, int>> rem(m);
    int assigned = 0;
    for (int i = 0; i < m; ++i) {
        const double exact = props[i] * n;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        rem[i] = {exact - counts[i], i};
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int j = 0; j < n - assigned; ++j) ++counts[rem[j].second];
    return counts;
}

std::vector<std::vector<int>> indices_by_class(const Dataset& data) {
    std::vector<std::vector<int>> by_class(data.num_classes);
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
        const int label = data.samples[i].label;
        if (label < 0 || label >= data.num_classes)
            throw std::invalid_argument("partition: label out of range");
        by_class[label].push_back(i);
    }
    return by_class;
}

std::vector<Dataset> empty_shards(const Dataset& data, int num_clients) {
    std::vector<Dataset> shards(num_clients);
    for (Dataset& s : shards) {
        s.feature_dim = data.feature_dim;
        s.num_classes = data.num_classes;
    }
    return shards;
}

// class -> owning client for the pathological split
std::vector<int> pathological_assignment(int num_classes, int num_clients,
                                         int classes_per_client, std::uint64_t seed) {
    if (num_clients < 1 || classes_per_client < 1)
        throw std::invalid_argument("partition_pathological: M and k must be positive");
    if (classes_per_client * num_clients > num_classes)
        throw std::invalid_argument(
            "partition_pathological: k*M exceeds the class count, groups cannot be disjoint");
    std::vector<int> order(num_classes);
    for (int c = 0; c < num_classes; ++c) order[c] = c;
    RngStream rng = RngStream::derive(seed, "pathological-classes", num_classes, num_clients);
    for (int i = num_classes - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng.next_below(i + 1))]);

    std::vector<int> owner(num_classes);
    for (int s = 0; s < num_classes; ++s) {
        const int grouped = classes_per_client * num_clients;
        owner[order[s]] = s < grouped ? s / classes_per_client : (s - grouped) % num_clients;
    }
    return owner;
}

// per-class client proportions for the dirichlet split at a given attempt
std::vector<std::vector<double>> dirichlet_proportions(int num_classes, int num_clients,
                                                       double alpha, std::uint64_t seed,
                                                       int attempt) {
    std::vector<std::vector<double>> props(num_classes, std::vector<double>(num_clients));
    for (int c = 0; c < num_classes; ++c) {
        RngStream rng = RngStream::derive(seed, "dirichlet-class", c, attempt);
        double sum = 0.0;
        for (int i = 0; i < num_clients; ++i) {
            props[c][i] = sample_gamma(rng, alpha);
            sum += props[c][i];
        }
        if (sum <= 0.0) throw std::runtime_error("partition_dirichlet: degenerate draw");
        for (double& p : props[c]) p /= sum;
    }
    return props;
}

void scatter_class(const Dataset& data, const std::vector<int>& class_indices,
                   const std::vector<int>& counts, std::vector<Dataset>& shards) {
    int pos = 0;
    for (int client = 0; client < static_cast<int>(counts.size()); ++client)
        for (int j = 0; j < counts[client]; ++j)
            shards[client].samples.push_back(data.samples[class_indices[pos++]]);
}

std::vector<Dataset> dirichlet_apply(const Dataset& data,
                                     const std::vector<std::vector<double>>& props,
                                     int num_clients) {
    std::vector<Dataset> shards = empty_shards(data, num_clients);
    std::vector<std::vector<int>> by_class = indices_by_class(data);
    for (int c = 0; c < data.num_classes; ++c)
        scatter_class(data, by_class[c],
                      largest_remainder_counts(props[c], static_cast<int>(by_class[c].size())),
                      shards);
    return shards;
}

bool all_nonempty(const std::vector<Dataset>& shards) {
    for (const Dataset& s : shards)
        if (s.samples.empty()) return false;
    return true;
}

std::vector<Dataset> pathological_apply(const Dataset& data, const std::vector<int>& owner,
                                        int num_clients) {
    std::vector<Dataset> shards = empty_shards(data, num_clients);
    for (const Sample& s : data.samples) shards[owner[s.label]].samples.push_back(s);
    return shards;
}

} // namespace

SyntheticData generate(const SyntheticTask& task) {
    const int L = task.num_classes;
    const int m = task.feature_dim;
    if (L < 1 || m < 1 || task.n_per_class < 1 || task.noise_std < 0.0)
        throw std::invalid_argument("generate: invalid task parameters");

    SyntheticData out;
    out.prototypes = Matrix(L, m);
    RngStream prng = RngStream::derive(task.seed, "prototypes", L, m);
    int retries = 0;
    for (int c = 0; c < L;) {
        std::vector<double> v(m);
        double norm = 0.0;
        for (double& x : v) {
            x = prng.next_gaussian();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (double& x : v) x /= norm;
        bool ok = true;
        for (int p = 0; p < c && ok; ++p) {
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += v[j] * out.prototypes(p, j);
            ok = std::abs(dot) <= 0.5;
        }
        if (!ok) {
            if (++retries > 1000)
                throw std::runtime_error(
                    "generate: prototype cosine bound unreachable after 1000 retries; "
                    "raise feature_dim or lower num_classes");
            continue;
        }
        for (int j = 0; j < m; ++j) out.prototypes(c, j) = v[j];
        ++c;
    }

    out.train.feature_dim = out.test.feature_dim = m;
    out.train.num_classes = out.test.num_classes = L;
    const int n_train = (task.n_per_class * 4) / 5;
    for (int c = 0; c < L; ++c) {
        RngStream srng = RngStream::derive(task.seed, "class-samples", c, task.n_per_class);
        for (int i = 0; i < task.n_per_class; ++i) {
            Sample s;
            s.label = c;
            s.features.resize(m);
            for (int j = 0; j < m; ++j)
                s.features[j] = out.prototypes(c, j) + task.noise_std * srng.next_gaussian();
            (i < n_train ? out.train : out.test).samples.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<Dataset> partition_pathological(const Dataset& data, int num_clients,
                                            int classes_per_client, std::uint64_t seed) {
    return pathological_apply(
        data, pathological_assignment(data.num_classes, num_clients, classes_per_client, seed),
        num_clients);
}

std::vector<Dataset> partition_dirichlet(const Dataset& data, int num_clients, double alpha,
                                         std::uint64_t seed) {
    if (alpha <= 0.0) throw std::invalid_argument("partition_dirichlet: alpha must be > 0");
    if (num_clients < 1) throw std::invalid_argument("partition_dirichlet: M must be positive");
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<Dataset> shards = dirichlet_apply(
            data, dirichlet_proportions(data.num_classes, num_clients, alpha, seed, attempt),
            num_clients);
        if (all_nonempty(shards)) return shards;
    }
    throw std::runtime_error("partition_dirichlet: a client stayed empty after 100 attempts");
}

std::vector<ClientShard> partition_task(const Dataset& train, const Dataset& test,
                                        const PartitionSpec& spec) {
    if (train.num_classes != test.num_classes || train.feature_dim != test.feature_dim)
        throw std::invalid_argument("partition_task: train/test metadata mismatch");
    std::vector<Dataset> tr, te;
    if (spec.mode == PartitionSpec::Mode::pathological) {
        std::vector<int> owner = pathological_assignment(
            train.num_classes, spec.num_clients, spec.classes_per_client, spec.seed);
        tr = pathological_apply(train, owner, spec.num_clients);
        te = pathological_apply(test, owner, spec.num_clients);
    } else {
        if (spec.alpha <= 0.0)
            throw std::invalid_argument("partition_task: alpha must be > 0");
        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            std::vector<std::vector<double>> props = dirichlet_proportions(
                train.num_classes, spec.num_clients, spec.alpha, spec.seed, attempt);
            tr = dirichlet_apply(train, props, spec.num_clients);
            te = dirichlet_apply(test, props, spec.num_clients);
            done = all_nonempty(tr) && all_nonempty(te);
        }
        if (!done)
            throw std::runtime_error("partition_task: a client stayed empty after 100 attempts");
    }
    std::vector<ClientShard> out(spec.num_clients);
    for (int i = 0; i < spec.num_clients; ++i) {
        out[i].train = std::move(tr[i]);
        out[i].test = std::move(te[i]);
    }
    return out;
}

void save_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_dataset_csv: cannot open " + path);
    f << "label";
    for (int j = 0; j < data.feature_dim; ++j) f << ",f" << j;
    f << "\n";
    char buf[64];
    for (const Sample& s : data.samples) {
        f << s.label;
        for (double x : s.features) {
            std::snprintf(buf, sizeof buf, ",%.17g", x);
            f << buf;
        }
        f << "\n";
    }
    if (!f) throw std::runtime_error("save_dataset_csv: write failed for " + path);
}

Dataset load_dataset_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_dataset_csv: empty file");
    int dim = 0;
    for (char c : line)
        if (c == ',') ++dim;

    Dataset out;
    out.feature_dim = dim;
    int max_label = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Sample s;
        char comma;
        ss >> s.label;
        s.features.resize(dim);
        for (int j = 0; j < dim; ++j) ss >> comma >> s.features[j];
        if (!ss) throw std::runtime_error("load_dataset_csv: malformed row in " + path);
        max_label = std::max(max_label, s.label);
        out.samples.push_back(std::move(s));
    }
    out.num_classes = max_label + 1;
    return out;
}

} // namespace promptfed
