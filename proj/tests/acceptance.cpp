// End-to-end acceptance gate: ten independent checks against the default
// benchmark, one pass/fail line each, nonzero exit on any failure.

#include "promptfed/experiment.hpp"
#include "promptfed/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace promptfed;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void verdict(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %2d %s: %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix random_matrix(RngStream& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.next_gaussian();
    return m;
}

// The standard benchmark: struct defaults plus a worker pool for speed (worker
// count must not affect results; checked separately below).
TrainingConfig benchmark() {
    TrainingConfig cfg;
    cfg.workers = 4;
    return cfg;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// --- criterion 1: projector properties -------------------------------------

void criterion_projector() {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream rng = RngStream::derive(1001, "acc-projector");
    double worst = 0.0;
    bool ok = true;
    for (int k = 0; k < 200; ++k) {
        const int m = 8 + static_cast<int>(rng.next_below(33));
        const int rows = 2 + static_cast<int>(rng.next_below(11));
        const double lambda = rng.next_uniform(0.05, 0.95);
        Matrix g = random_matrix(rng, rows, m, rng.next_uniform(0.1, 2.0));
        SubspaceProjector p = build_projector(g, lambda);
        const Matrix& R = p.projection;
        const double idem = frobenius_norm(matmul(R, R) - R);
        const double sym = frobenius_norm(R - R.transposed());
        const double spec = spectral_norm(R);
        double tr = 0.0;
        for (int i = 0; i < m; ++i) tr += R(i, i);
        const double tr_err = std::abs(tr - (m - std::floor(lambda * m)));
        worst = std::max({worst, idem, sym, spec - 1.0, tr_err});
        if (idem > 1e-9 || sym > 1e-9 || spec > 1.0 + 1e-8 || tr_err > 1e-6) ok = false;
    }
    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "200 projectors, worst residual %.3g, %.2fs (idempotent, symmetric, "
                  "spectral<=1, trace=m-floor(lambda*m))",
                  worst, dt);
    verdict(1, ok && dt < 10.0, buf);
}

// --- criterion 2: norm contraction -----------------------------------------

void criterion_contraction() {
    RngStream rng = RngStream::derive(1002, "acc-contraction");
    double worst = -1.0;
    for (int k = 0; k < 1000; ++k) {
        const int m = 4 + static_cast<int>(rng.next_below(29));
        Matrix g = random_matrix(rng, 2 + static_cast<int>(rng.next_below(7)), m, 1.0);
        Matrix a = random_matrix(rng, 1 + static_cast<int>(rng.next_below(8)), m,
                                 rng.next_uniform(0.05, 4.0));
        SubspaceProjector p = build_projector(g, rng.next_uniform(0.05, 0.95));
        const double na = frobenius_norm(a);
        worst = std::max({worst, frobenius_norm(matmul(a, p.projection)) - na,
                          frobenius_norm(a - matmul(a, p.projection)) - na});
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "1000 (A,R) pairs, worst violation margin %.3g", worst);
    verdict(2, worst <= 1e-12, buf);
}

// --- criterion 3: refinement equals the least-squares oracle ----------------

Matrix least_squares_oracle(const Matrix& local, const Matrix& global, int removed) {
    const SvdResult decomp = svd(global);
    const int m = global.cols();
    std::vector<std::vector<double>> basis;
    for (int k = removed; k < m; ++k) {
        std::vector<double> v(m);
        for (int i = 0; i < m; ++i) v[i] = decomp.right(i, k);
        for (const auto& q : basis) {
            double d = 0.0;
            for (int i = 0; i < m; ++i) d += v[i] * q[i];
            for (int i = 0; i < m; ++i) v[i] -= d * q[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    Matrix out(local.rows(), m);
    for (int r = 0; r < local.rows(); ++r)
        for (const auto& q : basis) {
            double d = 0.0;
            for (int i = 0; i < m; ++i) d += local(r, i) * q[i];
            for (int i = 0; i < m; ++i) out(r, i) += d * q[i];
        }
    return out;
}

void criterion_oracle() {
    RngStream rng = RngStream::derive(1003, "acc-oracle");
    double worst_gap = 0.0;
    bool ok = true;
    for (int k = 0; k < 100; ++k) {
        const int m = 8 + static_cast<int>(rng.next_below(25));
        const int s_l = 2 + static_cast<int>(rng.next_below(7));
        Matrix g_s = random_matrix(rng, 2 + static_cast<int>(rng.next_below(7)), m, 1.0);
        Matrix g_c = random_matrix(rng, s_l, m, 1.0);
        SubspaceProjector p = build_projector(g_s, rng.next_uniform(0.1, 0.9));
        Matrix refined = refine(g_c, p);
        const double gap = frobenius_norm(refined - least_squares_oracle(g_c, g_s, p.removed));
        worst_gap = std::max(worst_gap, gap);
        if (gap > 1e-8) ok = false;
        const double best_res = frobenius_norm(g_c - refined);
        int perturbations = 0;
        for (int t = 0; t < 60 && perturbations < 50; ++t) {
            Matrix feasible = refined + refine(random_matrix(rng, s_l, m, 0.3), p);
            if (frobenius_norm(feasible - refined) < 1e-9) continue;
            ++perturbations;
            if (frobenius_norm(feasible - g_c) <= best_res) ok = false;
        }
        if (perturbations < 50) ok = false;
    }
    char buf[140];
    std::snprintf(buf, sizeof(buf),
                  "100 instances vs independent projection oracle, worst gap %.3g; 50 feasible "
                  "perturbations each strictly worse",
                  worst_gap);
    verdict(3, ok, buf);
}

// --- criterion 4: gradients ------------------------------------------------

void criterion_gradients() {
    RngStream rng = RngStream::derive(1004, "acc-gradients");
    const int m = 12, s_s = 3, s_l = 2, classes = 5;
    TokenTable table(m, classes, 17);
    FrozenEncoder enc(m, 17);
    const double h = 1e-6;
    double worst_fd = 0.0;
    bool ok = true;

    auto rel_err = [](double fd, double an) {
        return std::abs(fd - an) / std::max(1e-8, std::max(std::abs(fd), std::abs(an)));
    };

    // 50 probes per loss term, each at a random coordinate of a fresh instance.
    for (int k = 0; k < 50; ++k) {
        Matrix g_s = random_matrix(rng, s_s, m, 0.4);
        Matrix g_c = random_matrix(rng, s_l, m, 0.4);
        Matrix refined = random_matrix(rng, s_l, m, 0.4);
        Batch batch;
        for (int b = 0; b < 4; ++b) {
            LabeledExample ex;
            ex.label = static_cast<int>(rng.next_below(classes));
            for (int j = 0; j < m; ++j) ex.image.push_back(rng.next_gaussian());
            batch.push_back(ex);
        }
        ObjectiveConfig ocfg;
        ocfg.mu = 0.5;
        ocfg.gamma = 5.0; // keep the hinge active for the sep probe
        GradientPair gp = gradients_fixed_refined(g_s, g_c, refined, batch, table, enc, ocfg);
        std::vector<double> str_row = stretch_gradient_row(g_c, refined, enc);
        std::vector<double> sep_row = separate_gradient_row(g_c, g_s, ocfg.gamma, enc);
        const int i = static_cast<int>(rng.next_below(s_l));
        const int j = static_cast<int>(rng.next_below(m));
        const int gi = static_cast<int>(rng.next_below(s_s));

        auto fd_local = [&](auto term) {
            const double keep = g_c(i, j);
            g_c(i, j) = keep + h;
            const double up = term();
            g_c(i, j) = keep - h;
            const double dn = term();
            g_c(i, j) = keep;
            return (up - dn) / (2 * h);
        };

        // ce_local: full local gradient minus the two divergence rows.
        double fd = fd_local([&] {
            return total_loss(g_s, g_c, refined, batch, table, enc, ocfg).ce_local;
        });
        double an = gp.d_local(i, j) - str_row[j] - sep_row[j];
        worst_fd = std::max(worst_fd, rel_err(fd, an));

        // stretch
        fd = fd_local([&] { return stretch_loss(g_c, refined, enc); });
        worst_fd = std::max(worst_fd, rel_err(fd, str_row[j]));

        // separate (active hinge)
        fd = fd_local([&] { return separate_loss(g_c, g_s, ocfg.gamma, enc); });
        worst_fd = std::max(worst_fd, rel_err(fd, sep_row[j]));

        // ce_global
        const double keep = g_s(gi, j);
        g_s(gi, j) = keep + h;
        const double up = total_loss(g_s, g_c, refined, batch, table, enc, ocfg).ce_global;
        g_s(gi, j) = keep - h;
        const double dn = total_loss(g_s, g_c, refined, batch, table, enc, ocfg).ce_global;
        g_s(gi, j) = keep;
        fd = (up - dn) / (2 * h);
        worst_fd = std::max(worst_fd, rel_err(fd, gp.d_global(gi, j)));
    }
    if (worst_fd > 1e-4) ok = false;

    // Gradient-norm bounds with the analytic Lipschitz constant of the frozen
    // map: ||grad str||_F <= 2 L^2 ||G - G~||_F; ||subgrad sep||_F <= L.
    double worst_bound = -1.0;
    FrozenEncoder enc2(24, 23);
    for (int k = 0; k < 500; ++k) {
        const int rows = 1 << static_cast<int>(rng.next_below(4));
        Matrix g_c = random_matrix(rng, rows, 24, rng.next_uniform(0.05, 1.2));
        Matrix g_s = random_matrix(rng, 4, 24, rng.next_uniform(0.05, 1.2));
        Matrix refined = refine(g_c, build_projector(g_s, 0.6));
        const double l = enc2.lipschitz_bound(rows);
        std::vector<double> sg = stretch_gradient_row(g_c, refined, enc2);
        double n2 = 0.0;
        for (double v : sg) n2 += v * v;
        worst_bound = std::max(worst_bound, std::sqrt(rows * n2) -
                                                2.0 * l * l * frobenius_norm(g_c - refined));
        if (separate_loss(g_c, g_s, 0.8, enc2) > 0.0) {
            std::vector<double> pg = separate_gradient_row(g_c, g_s, 0.8, enc2);
            n2 = 0.0;
            for (double v : pg) n2 += v * v;
            worst_bound = std::max(worst_bound, std::sqrt(rows * n2) - l);
        }
    }
    if (worst_bound > 1e-12) ok = false;

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "50 FD probes per term, worst rel err %.3g; 500 Lipschitz-bound instances, "
                  "worst slack %.3g",
                  worst_fd, worst_bound);
    verdict(4, ok, buf);
}

// --- criterion 5: aggregation and wire audit --------------------------------

void criterion_federation() {
    RngStream rng = RngStream::derive(1005, "acc-federation");
    bool ok = true;
    for (int k = 0; k < 50; ++k) {
        const int rows = 2 + static_cast<int>(rng.next_below(7));
        const int cols = 4 + static_cast<int>(rng.next_below(13));
        const int n = 2 + static_cast<int>(rng.next_below(9));
        std::vector<std::pair<Matrix, int>> uploads;
        for (int i = 0; i < n; ++i)
            uploads.emplace_back(random_matrix(rng, rows, cols, 1.0),
                                 1 + static_cast<int>(rng.next_below(200)));
        Matrix mean = aggregate(uploads);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double lo = uploads[0].first(i, j), hi = lo;
                for (const auto& [g, hh] : uploads) {
                    lo = std::min(lo, g(i, j));
                    hi = std::max(hi, g(i, j));
                }
                if (mean(i, j) < lo - 1e-12 || mean(i, j) > hi + 1e-12) ok = false;
            }
        std::vector<std::pair<Matrix, int>> same(n, {uploads[0].first, 3});
        if (frobenius_norm(aggregate(same) - uploads[0].first) > 1e-12) ok = false;
        std::vector<std::pair<Matrix, int>> scaled = uploads;
        for (auto& [g, hh] : scaled) hh *= 5;
        if (frobenius_norm(aggregate(scaled) - mean) > 1e-12) ok = false;
    }

    // Wire audit on a shortened benchmark: every client->server payload holds
    // exactly S_s * m float64 values (plus the fixed 20-byte header).
    TrainingConfig cfg = benchmark();
    cfg.rounds = 3;
    std::vector<std::vector<std::uint8_t>> wire;
    run_training(cfg, &wire);
    const std::size_t payload = 8ull * cfg.global_len * cfg.task.feature_dim;
    std::size_t audited = 0;
    for (const auto& bytes : wire) {
        if (bytes.size() != 20 + payload) ok = false;
        UploadMessage msg = decode_upload(bytes);
        if (msg.payload.rows() != cfg.global_len ||
            msg.payload.cols() != cfg.task.feature_dim || !msg.payload.all_finite())
            ok = false;
        ++audited;
    }
    if (audited != static_cast<std::size_t>(cfg.num_clients) * cfg.rounds) ok = false;

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "aggregation fixed-point/convex-hull/normalization on 50 cases; %zu wire "
                  "payloads of exactly %d x %d float64",
                  audited, cfg.global_len, cfg.task.feature_dim);
    verdict(5, ok, buf);
}

// --- criterion 6: worker-count determinism ----------------------------------

void criterion_determinism() {
    ExperimentConfig cfg;
    cfg.run_name = "determinism";
    fs::path root = fs::temp_directory_path() / "promptfed-acceptance";
    fs::remove_all(root);
    cfg.train.workers = 1;
    run_experiment(cfg, (root / "w1").string());
    cfg.train.workers = 4;
    run_experiment(cfg, (root / "w4").string());
    const std::string a = read_file(root / "w1" / "determinism" / "rounds.csv");
    const std::string b = read_file(root / "w4" / "determinism" / "rounds.csv");
    char buf[120];
    std::snprintf(buf, sizeof(buf),
                  "default benchmark rounds.csv byte-identical for --workers 1 vs 4 (%zu bytes)",
                  a.size());
    verdict(6, !a.empty() && a == b, buf);
}

// --- criterion 7: convergence ----------------------------------------------

void criterion_convergence() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.run_name = "convergence";
    cfg.train.workers = 4;
    fs::path root = fs::temp_directory_path() / "promptfed-acceptance";
    ConvergenceResult res = run_convergence(cfg, root.string(), 3);
    const double dt = seconds_since(t0);
    const bool tail_ok = res.trajectories[0].tail_ok; // every seed at default beta
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "grad^2 tail/head at beta=%.3g: %.3f (<=0.25 for 3/3 seeds: %s); plateau "
                  "non-increasing under beta halving: %s; %.0fs",
                  cfg.train.beta,
                  res.trajectories[0].tail_mean / std::max(1e-300, res.trajectories[0].head_mean),
                  tail_ok ? "yes" : "no", res.plateau_monotone ? "yes" : "no", dt);
    verdict(7, tail_ok && res.plateau_monotone && dt < 180.0, buf);
}

// --- criterion 8: ablation ordering -----------------------------------------

void criterion_ablation() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.run_name = "ablation";
    cfg.train.workers = 4;
    fs::path root = fs::temp_directory_path() / "promptfed-acceptance";
    std::vector<AblationRow> rows = run_ablation(cfg, root.string(), 5);
    const double dt = seconds_since(t0);
    auto find = [&](const char* name) {
        for (const AblationRow& r : rows)
            if (r.name == name) return r.mean_accuracy;
        return -1.0;
    };
    const double full = find("full"), refinement = find("refinement"),
                 framework = find("framework"), baseline = find("global_only");
    const bool ordered =
        full > refinement && refinement > framework && framework > baseline;
    const bool margin = full >= baseline + 0.03;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "5-seed mean accuracy full=%.4f > refinement=%.4f > framework=%.4f > "
                  "global_only=%.4f: %s; full-baseline=%.1f pts (>=3): %s; %.0fs",
                  full, refinement, framework, baseline, ordered ? "yes" : "no",
                  100.0 * (full - baseline), margin ? "yes" : "no", dt);
    verdict(8, ordered && margin && dt < 300.0, buf);
}

// --- criterion 9: length heterogeneity ---------------------------------------

void criterion_lengths() {
    ExperimentConfig cfg;
    cfg.run_name = "lengths";
    cfg.train.workers = 4;
    fs::path root = fs::temp_directory_path() / "promptfed-acceptance";
    LengthSweepResult res = run_length_sweep(cfg, root.string(), 3);
    const double gap = res.fixed_accuracy - res.random_accuracy;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "3-seed mean accuracy fixed-8 %.4f vs uniform{4..64} %.4f, gap %.1f pts "
                  "(within 2)",
                  res.fixed_accuracy, res.random_accuracy, 100.0 * gap);
    verdict(9, gap <= 0.02, buf);
}

// --- criterion 10: refinement overhead ---------------------------------------

void criterion_overhead() {
    TrainingConfig cfg = benchmark();
    TrainingResult res = run_training(cfg);
    double mean = 0.0, worst = 0.0;
    for (const RoundReport& r : res.server.history) {
        mean += r.refine_wall_fraction;
        worst = std::max(worst, r.refine_wall_fraction);
    }
    mean /= res.server.history.size();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "projector+refine share of round wall time: mean %.4f%%, worst round %.4f%% "
                  "(<=5%%)",
                  100.0 * mean, 100.0 * worst);
    verdict(10, mean <= 0.05 && worst <= 0.05, buf);
}

} // namespace

int main() {
    criterion_projector();
    criterion_contraction();
    criterion_oracle();
    criterion_gradients();
    criterion_federation();
    criterion_determinism();
    criterion_convergence();
    criterion_ablation();
    criterion_lengths();
    criterion_overhead();
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all 10 criteria passed\n");
    return 0;
}
