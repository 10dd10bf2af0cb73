#include "promptfed/experiment.hpp"
#include "promptfed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace promptfed {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

fs::path prepare_dir(const std::string& out_root, const std::string& run_name) {
    fs::path dir = fs::path(out_root) / run_name;
    fs::create_directories(dir);
    return dir;
}

std::string rounds_csv(const std::vector<RoundReport>& history) {
    std::ostringstream csv;
    csv << "round,client_id,acc,ce_local,ce_global,str,sep,total,grad_norm_global,"
           "refine_ms_fraction\n";
    for (const RoundReport& r : history) {
        for (const ClientRoundStats& c : r.clients) {
            csv << r.round << ',' << c.client_id << ',' << fmt(c.accuracy) << ','
                << fmt(c.loss.ce_local) << ',' << fmt(c.loss.ce_global) << ','
                << fmt(c.loss.str) << ',' << fmt(c.loss.sep) << ',' << fmt(c.loss.total)
                << ",0,0\n";
        }
        csv << r.round << ",-1," << fmt(r.mean_accuracy) << ',' << fmt(r.mean_loss.ce_local)
            << ',' << fmt(r.mean_loss.ce_global) << ',' << fmt(r.mean_loss.str) << ','
            << fmt(r.mean_loss.sep) << ',' << fmt(r.mean_loss.total) << ','
            << fmt(r.global_grad_norm) << ',' << fmt(r.refine_work_fraction) << '\n';
    }
    return csv.str();
}

// Aggregate-row accuracies parsed back out of the CSV text, so the summary is
// recomputable from the artifact alone.
std::vector<double> aggregate_accuracies(const std::string& csv) {
    std::vector<double> acc;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        std::size_t c1 = line.find(',');
        std::size_t c2 = line.find(',', c1 + 1);
        std::size_t c3 = line.find(',', c2 + 1);
        if (line.substr(c1 + 1, c2 - c1 - 1) == "-1")
            acc.push_back(std::stod(line.substr(c2 + 1, c3 - c2 - 1)));
    }
    return acc;
}

double last10_mean(TrainingConfig cfg) {
    TrainingResult res = run_training(cfg);
    const int z = static_cast<int>(res.server.history.size());
    const int take = std::min(10, z);
    double sum = 0.0;
    for (int i = z - take; i < z; ++i) sum += res.server.history[i].mean_accuracy;
    return sum / take;
}

} // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_root) {
    fs::path dir = prepare_dir(out_root, cfg.run_name);
    TrainingResult res = run_training(cfg.train);

    std::string csv = rounds_csv(res.server.history);
    write_file(dir / "rounds.csv", csv);
    write_file(dir / "config.snapshot", config_snapshot(cfg));

    std::ostringstream timing;
    timing << "round,round_wall_ms,refine_wall_fraction\n";
    for (const RoundReport& r : res.server.history)
        timing << r.round << ',' << fmt(r.round_wall_ms) << ',' << fmt(r.refine_wall_fraction)
               << '\n';
    write_file(dir / "timing.csv", timing.str());

    std::vector<double> acc = aggregate_accuracies(csv);
    const int take = std::min<int>(10, static_cast<int>(acc.size()));
    double mean = 0.0, var = 0.0;
    for (int i = static_cast<int>(acc.size()) - take; i < static_cast<int>(acc.size()); ++i)
        mean += acc[i];
    mean /= take;
    for (int i = static_cast<int>(acc.size()) - take; i < static_cast<int>(acc.size()); ++i)
        var += (acc[i] - mean) * (acc[i] - mean);
    const double stdev = take > 1 ? std::sqrt(var / (take - 1)) : 0.0;

    RunSummary summary;
    summary.mean_accuracy = mean;
    summary.std_accuracy = stdev;
    summary.rounds = static_cast<int>(acc.size());
    summary.out_dir = dir.string();

    std::ostringstream sum;
    sum << "rounds = " << summary.rounds << "\n";
    sum << "last10_mean_accuracy = " << fmt(mean) << "\n";
    sum << "last10_std_accuracy = " << fmt(stdev) << "\n";
    write_file(dir / "summary.txt", sum.str());
    return summary;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::string& out_root,
                                      int num_seeds) {
    fs::path dir = prepare_dir(out_root, cfg.run_name);

    struct Variant {
        const char* name;
        bool global_only, no_refine, no_div;
    };
    // Cumulative grid: baseline, shared-prompt federation with local prompts,
    // plus subspace refinement, plus both divergence-control losses.
    const Variant variants[] = {
        {"global_only", true, true, true},
        {"framework", false, true, true},
        {"refinement", false, false, true},
        {"full", false, false, false},
    };

    std::ostringstream csv;
    csv << "variant,seed,last10_accuracy\n";
    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        double sum = 0.0;
        for (int i = 0; i < num_seeds; ++i) {
            TrainingConfig t = cfg.train;
            t.master_seed = cfg.train.master_seed + static_cast<std::uint64_t>(i);
            t.global_only = v.global_only;
            t.disable_refinement = v.no_refine;
            t.disable_str = v.no_div;
            t.disable_sep = v.no_div;
            const double a = last10_mean(t);
            csv << v.name << ',' << t.master_seed << ',' << fmt(a) << '\n';
            sum += a;
        }
        rows.push_back(AblationRow{v.name, sum / num_seeds});
    }
    write_file(dir / "ablation.csv", csv.str());

    std::stable_sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
        return a.mean_accuracy > b.mean_accuracy;
    });
    std::ostringstream table;
    table << "rank,variant,mean_last10_accuracy\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
        table << i + 1 << ',' << rows[i].name << ',' << fmt(rows[i].mean_accuracy) << '\n';
    write_file(dir / "ablation_ranked.csv", table.str());
    return rows;
}

ConvergenceResult run_convergence(const ExperimentConfig& cfg, const std::string& out_root,
                                  int num_seeds) {
    fs::path dir = prepare_dir(out_root, cfg.run_name);
    // Halved learning rates get proportionally more rounds so every run
    // reaches its own plateau; comparing plateaus at equal round counts would
    // only measure how far the slow runs lag, not their noise floor.
    const double betas[] = {cfg.train.beta, cfg.train.beta / 2.0, cfg.train.beta / 4.0};
    const int round_scale[] = {1, 2, 4};

    std::ostringstream csv;
    csv << "beta,seed,round,grad_norm_sq,mean_total_loss\n";

    ConvergenceResult result;
    for (int bi = 0; bi < 3; ++bi) {
        const double beta = betas[bi];
        ConvergenceTrajectory traj;
        traj.beta = beta;
        traj.tail_ok = true;
        traj.noop = beta == 0.0;
        for (int i = 0; i < num_seeds; ++i) {
            TrainingConfig t = cfg.train;
            t.beta = beta;
            t.rounds = cfg.train.rounds * round_scale[bi];
            t.master_seed = cfg.train.master_seed + static_cast<std::uint64_t>(i);
            TrainingResult res;
            try {
                res = run_training(t);
            } catch (const std::exception&) {
                // Numerical blow-up under a gross overstep counts as detected
                // divergence, not a harness failure.
                traj.diverged = true;
                traj.tail_ok = false;
                continue;
            }
            const int z = static_cast<int>(res.server.history.size());
            const int w = std::max(1, z / 5); // 20% window
            double head = 0.0, tail = 0.0, loss_head = 0.0, loss_tail = 0.0;
            for (int r = 0; r < z; ++r) {
                const RoundReport& rep = res.server.history[r];
                const double g2 = rep.global_grad_norm * rep.global_grad_norm;
                csv << fmt(beta) << ',' << t.master_seed << ',' << r << ',' << fmt(g2) << ','
                    << fmt(rep.mean_loss.total) << '\n';
                if (r < w) {
                    head += g2;
                    loss_head += rep.pre_step_loss;
                }
                if (r >= z - w) {
                    tail += g2;
                    loss_tail += rep.pre_step_loss;
                }
            }
            head /= w;
            tail /= w;
            traj.head_mean += head / num_seeds;
            traj.tail_mean += tail / num_seeds;
            if (beta == 0.0 || head == 0.0) traj.noop = true;
            else if (!std::isfinite(tail) || tail > 0.25 * head) traj.tail_ok = false;
            // Pre-step losses are measured on each round's first sampled batch,
            // so a run that never moves still jitters with the batch draw; only
            // compare them when the run actually takes steps.
            if (!traj.noop &&
                (!std::isfinite(loss_tail) ||
                 (loss_tail / w > 1.1 * loss_head / w && loss_tail / w > loss_head / w + 0.05)))
                traj.diverged = true;
        }
        result.trajectories.push_back(traj);
    }
    write_file(dir / "convergence.csv", csv.str());

    result.tail_ok_all = true;
    result.plateau_monotone = true;
    for (std::size_t i = 0; i < result.trajectories.size(); ++i) {
        if (!result.trajectories[i].noop && !result.trajectories[i].tail_ok)
            result.tail_ok_all = false;
        if (i > 0 &&
            result.trajectories[i].tail_mean > result.trajectories[i - 1].tail_mean)
            result.plateau_monotone = false;
    }

    std::ostringstream verdict;
    for (const ConvergenceTrajectory& t : result.trajectories) {
        verdict << "beta " << fmt(t.beta) << ": head=" << fmt(t.head_mean)
                << " tail=" << fmt(t.tail_mean) << " "
                << (t.noop ? "no-op"
                           : (t.diverged ? "diverged"
                                         : (t.tail_ok ? "tail<=25%head" : "tail>25%head")))
                << "\n";
    }
    verdict << "tail_criterion " << (result.tail_ok_all ? "pass" : "fail") << "\n";
    verdict << "plateau_non_increasing " << (result.plateau_monotone ? "pass" : "fail") << "\n";
    write_file(dir / "verdict.txt", verdict.str());
    return result;
}

LengthSweepResult run_length_sweep(const ExperimentConfig& cfg, const std::string& out_root,
                                   int num_seeds) {
    fs::path dir = prepare_dir(out_root, cfg.run_name);
    std::ostringstream csv;
    csv << "mode,seed,client_id,local_len,last10_accuracy\n";

    LengthSweepResult result;
    for (int mode = 0; mode < 2; ++mode) {
        const bool random_lengths = mode == 1;
        double sum = 0.0;
        for (int i = 0; i < num_seeds; ++i) {
            TrainingConfig t = cfg.train;
            t.master_seed = cfg.train.master_seed + static_cast<std::uint64_t>(i);
            t.heterogeneous_lengths = random_lengths;
            TrainingResult res = run_training(t);
            const int z = static_cast<int>(res.server.history.size());
            const int take = std::min(10, z);
            for (const ClientState& c : res.clients) {
                double acc = 0.0;
                for (int r = z - take; r < z; ++r)
                    acc += res.server.history[r].clients[c.id].accuracy;
                csv << (random_lengths ? "uniform_random" : "fixed") << ',' << t.master_seed
                    << ',' << c.id << ',' << c.local_len << ',' << fmt(acc / take) << '\n';
            }
            double mean = 0.0;
            for (int r = z - take; r < z; ++r) mean += res.server.history[r].mean_accuracy;
            sum += mean / take;
        }
        (random_lengths ? result.random_accuracy : result.fixed_accuracy) = sum / num_seeds;
    }
    write_file(dir / "lengths.csv", csv.str());

    std::ostringstream sum;
    sum << "fixed_mean_accuracy = " << fmt(result.fixed_accuracy) << "\n";
    sum << "uniform_random_mean_accuracy = " << fmt(result.random_accuracy) << "\n";
    write_file(dir / "lengths_summary.txt", sum.str());
    return result;
}

namespace {

Matrix random_matrix(RngStream& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.next_gaussian();
    return m;
}

CheckSuite projector_suite(bool inject_fault) {
    CheckSuite suite{"projector", 200, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-projector");
    for (int k = 0; k < suite.cases; ++k) {
        const int m = 8 + static_cast<int>(rng.next_below(25));
        const int rows = 2 + static_cast<int>(rng.next_below(10));
        const double lambda = rng.next_uniform(0.05, 0.95);
        Matrix g = random_matrix(rng, rows, m, 1.0);
        SubspaceProjector p = build_projector(g, lambda);
        if (inject_fault && m > 1) p.projection(0, 1) += 1e-6;
        const Matrix& R = p.projection;
        const double idem = frobenius_norm(matmul(R, R) - R);
        const double sym = frobenius_norm(R - R.transposed());
        const double spec = spectral_norm(R);
        double tr = 0.0;
        for (int i = 0; i < m; ++i) tr += R(i, i);
        const double tr_err = std::abs(tr - (m - std::floor(lambda * m)));
        suite.max_residual = std::max({suite.max_residual, idem, sym, spec - 1.0, tr_err});
        if (idem > 1e-9 || sym > 1e-9 || spec > 1.0 + 1e-8 || tr_err > 1e-6) ++suite.failures;
    }
    return suite;
}

CheckSuite contraction_suite() {
    CheckSuite suite{"contraction", 1000, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-contraction");
    for (int k = 0; k < suite.cases; ++k) {
        const int m = 4 + static_cast<int>(rng.next_below(29));
        const int rows = 1 + static_cast<int>(rng.next_below(8));
        Matrix g = random_matrix(rng, 2 + static_cast<int>(rng.next_below(6)), m, 1.0);
        Matrix a = random_matrix(rng, rows, m, rng.next_uniform(0.1, 3.0));
        SubspaceProjector p = build_projector(g, rng.next_uniform(0.05, 0.95));
        const double na = frobenius_norm(a);
        const double v1 = frobenius_norm(matmul(a, p.projection)) - na;
        const double v2 = frobenius_norm(a - matmul(a, p.projection)) - na;
        suite.max_residual = std::max({suite.max_residual, v1, v2});
        if (v1 > 1e-12 || v2 > 1e-12) ++suite.failures;
    }
    return suite;
}

CheckSuite refinement_oracle_suite() {
    CheckSuite suite{"refinement_oracle", 25, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-oracle");
    for (int k = 0; k < suite.cases; ++k) {
        const int m = 8 + static_cast<int>(rng.next_below(17));
        const int s_l = 2 + static_cast<int>(rng.next_below(6));
        Matrix g_s = random_matrix(rng, 2 + static_cast<int>(rng.next_below(6)), m, 1.0);
        Matrix g_c = random_matrix(rng, s_l, m, 1.0);
        SubspaceProjector p = build_projector(g_s, rng.next_uniform(0.1, 0.9));
        Matrix refined = refine(g_c, p);
        const double best = frobenius_norm(g_c - refined);
        bool ok = true;
        // Any other point of the feasible set (rows inside the retained span)
        // must sit strictly farther from the original prompt.
        for (int t = 0; t < 20; ++t) {
            Matrix d = matmul(random_matrix(rng, s_l, m, 0.3), p.projection);
            if (frobenius_norm(d) < 1e-8) continue;
            const double res = frobenius_norm(g_c - (refined + d));
            suite.max_residual = std::max(suite.max_residual, best - res);
            if (res <= best) ok = false;
        }
        if (!ok) ++suite.failures;
    }
    return suite;
}

CheckSuite gradient_fd_suite() {
    CheckSuite suite{"gradient_fd", 10, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-fd");
    const int m = 10, s_s = 3, s_l = 2, classes = 4;
    TokenTable table(m, classes, 7);
    FrozenEncoder enc(m, 7);
    ObjectiveConfig ocfg;
    ocfg.mu = 0.5;
    ocfg.gamma = 0.8;
    for (int k = 0; k < suite.cases; ++k) {
        Matrix g_s = random_matrix(rng, s_s, m, 0.3);
        Matrix g_c = random_matrix(rng, s_l, m, 0.3);
        Matrix refined = random_matrix(rng, s_l, m, 0.3);
        Batch batch;
        for (int b = 0; b < 3; ++b) {
            LabeledExample ex;
            ex.label = static_cast<int>(rng.next_below(classes));
            for (int j = 0; j < m; ++j) ex.image.push_back(rng.next_gaussian());
            batch.push_back(ex);
        }
        GradientPair gp = gradients_fixed_refined(g_s, g_c, refined, batch, table, enc, ocfg);
        const double h = 1e-6;
        auto check = [&](Matrix& target, const Matrix& grad, bool local_terms) {
            const int i = static_cast<int>(rng.next_below(target.rows()));
            const int j = static_cast<int>(rng.next_below(m));
            const double keep = target(i, j);
            auto value = [&] {
                LossBreakdown lb = total_loss(g_s, g_c, refined, batch, table, enc, ocfg);
                return local_terms ? lb.ce_local + lb.str + lb.sep : lb.ce_global;
            };
            target(i, j) = keep + h;
            const double up = value();
            target(i, j) = keep - h;
            const double dn = value();
            target(i, j) = keep;
            const double fd = (up - dn) / (2 * h);
            const double err = std::abs(fd - grad(i, j)) /
                               std::max(1e-8, std::max(std::abs(fd), std::abs(grad(i, j))));
            suite.max_residual = std::max(suite.max_residual, err);
            return err <= 1e-4;
        };
        if (!check(g_c, gp.d_local, true) || !check(g_s, gp.d_global, false)) ++suite.failures;
    }
    return suite;
}

CheckSuite gradient_bound_suite() {
    CheckSuite suite{"gradient_bounds", 500, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-bounds");
    const int m = 16;
    FrozenEncoder enc(m, 11);
    for (int k = 0; k < suite.cases; ++k) {
        const int s_l = 1 << static_cast<int>(rng.next_below(4));
        Matrix g_c = random_matrix(rng, s_l, m, rng.next_uniform(0.05, 1.0));
        Matrix g_s = random_matrix(rng, 4, m, rng.next_uniform(0.05, 1.0));
        SubspaceProjector p = build_projector(g_s, 0.6);
        Matrix refined = refine(g_c, p);
        const double l_d = enc.lipschitz_bound(s_l);

        std::vector<double> sg = stretch_gradient_row(g_c, refined, enc);
        double sg_norm2 = 0.0;
        for (double v : sg) sg_norm2 += v * v;
        const double sg_norm = std::sqrt(static_cast<double>(s_l) * sg_norm2);
        const double sg_bound = 2.0 * l_d * l_d * frobenius_norm(g_c - refined);
        suite.max_residual = std::max(suite.max_residual, sg_norm - sg_bound);
        bool ok = sg_norm <= sg_bound + 1e-12;

        if (separate_loss(g_c, g_s, 0.8, enc) > 0.0) {
            std::vector<double> pg = separate_gradient_row(g_c, g_s, 0.8, enc);
            double pg_norm2 = 0.0;
            for (double v : pg) pg_norm2 += v * v;
            const double pg_norm = std::sqrt(static_cast<double>(s_l) * pg_norm2);
            suite.max_residual = std::max(suite.max_residual, pg_norm - l_d);
            if (pg_norm > l_d + 1e-12) ok = false;
        }
        if (!ok) ++suite.failures;
    }
    return suite;
}

CheckSuite aggregation_suite() {
    CheckSuite suite{"aggregation", 50, 0, 0.0};
    RngStream rng = RngStream::derive(20240811, "check-agg");
    for (int k = 0; k < suite.cases; ++k) {
        const int rows = 2 + static_cast<int>(rng.next_below(6));
        const int cols = 4 + static_cast<int>(rng.next_below(12));
        const int n = 2 + static_cast<int>(rng.next_below(8));
        std::vector<std::pair<Matrix, int>> uploads;
        for (int i = 0; i < n; ++i)
            uploads.emplace_back(random_matrix(rng, rows, cols, 1.0),
                                 1 + static_cast<int>(rng.next_below(100)));
        Matrix mean = aggregate(uploads);
        bool ok = true;
        // Convex hull: every aggregated entry between the entrywise extremes.
        for (int i = 0; i < rows && ok; ++i)
            for (int j = 0; j < cols; ++j) {
                double lo = uploads[0].first(i, j), hi = lo;
                for (const auto& [g, h] : uploads) {
                    lo = std::min(lo, g(i, j));
                    hi = std::max(hi, g(i, j));
                }
                const double v = mean(i, j);
                const double slack = std::max(std::max(lo - v, v - hi), 0.0);
                suite.max_residual = std::max(suite.max_residual, slack);
                if (slack > 1e-12) {
                    ok = false;
                    break;
                }
            }
        // Fixed point: identical uploads reproduce the input.
        std::vector<std::pair<Matrix, int>> same;
        for (int i = 0; i < n; ++i)
            same.emplace_back(uploads[0].first, 1 + static_cast<int>(rng.next_below(50)));
        const double fp = frobenius_norm(aggregate(same) - uploads[0].first);
        suite.max_residual = std::max(suite.max_residual, fp);
        if (fp > 1e-12) ok = false;
        // Normalization: scaling every weight by a constant changes nothing.
        std::vector<std::pair<Matrix, int>> scaled = uploads;
        for (auto& [g, h] : scaled) h *= 7;
        const double nr = frobenius_norm(aggregate(scaled) - mean);
        suite.max_residual = std::max(suite.max_residual, nr);
        if (nr > 1e-12) ok = false;
        if (!ok) ++suite.failures;
    }
    return suite;
}

CheckSuite wire_audit_suite() {
    CheckSuite suite{"wire_audit", 0, 0, 0.0};
    TrainingConfig cfg;
    cfg.master_seed = 5;
    cfg.num_clients = 3;
    cfg.rounds = 2;
    cfg.global_len = 4;
    cfg.local_len = 3;
    cfg.task.num_classes = 6;
    cfg.task.feature_dim = 12;
    cfg.task.n_per_class = 30;
    cfg.partition.classes_per_client = 2;
    std::vector<std::vector<std::uint8_t>> wire;
    run_training(cfg, &wire);
    suite.cases = static_cast<int>(wire.size());
    const std::size_t expect = 20 + 8ull * cfg.global_len * cfg.task.feature_dim;
    for (const auto& bytes : wire) {
        bool ok = bytes.size() == expect;
        UploadMessage msg = decode_upload(bytes);
        if (msg.payload.rows() != cfg.global_len || msg.payload.cols() != cfg.task.feature_dim)
            ok = false;
        if (!msg.payload.all_finite()) ok = false;
        if (!ok) ++suite.failures;
    }
    if (suite.cases != cfg.num_clients * cfg.rounds) ++suite.failures;
    return suite;
}

} // namespace

CheckReport run_checks(bool inject_projector_fault) {
    CheckReport report;
    report.suites.push_back(projector_suite(inject_projector_fault));
    report.suites.push_back(contraction_suite());
    report.suites.push_back(refinement_oracle_suite());
    report.suites.push_back(gradient_fd_suite());
    report.suites.push_back(gradient_bound_suite());
    report.suites.push_back(aggregation_suite());
    report.suites.push_back(wire_audit_suite());

    report.passed = true;
    std::ostringstream text;
    for (const CheckSuite& s : report.suites) {
        if (s.failures > 0) report.passed = false;
        text << s.name << ": cases=" << s.cases << " failures=" << s.failures
             << " max_residual=" << fmt(s.max_residual) << "\n";
    }
    text << (report.passed ? "ALL CHECKS PASS" : "CHECK FAILURES PRESENT") << "\n";
    report.text = text.str();
    return report;
}

} // namespace promptfed
