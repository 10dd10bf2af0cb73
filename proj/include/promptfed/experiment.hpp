#pragma once

#include "promptfed/config.hpp"

#include <string>
#include <vector>

namespace promptfed {

// Artifacts written by every experiment: config.snapshot, rounds.csv,
// summary.txt, timing.csv under <out_dir>/<run_name>/.
// rounds.csv schema:
//   round,client_id,acc,ce_local,ce_global,str,sep,total,grad_norm_global,refine_ms_fraction
// with one row per (round, client) plus a client_id=-1 aggregate row per
// round. The aggregate rows carry the round-level gradient norm and the
// deterministic refine work share; wall-clock timings go to timing.csv only so
// rounds.csv stays byte-identical across worker counts.

struct RunSummary {
    double mean_accuracy = 0.0; // over aggregate rows of the last 10 rounds
    double std_accuracy = 0.0;
    int rounds = 0;
    std::string out_dir;
};

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_root);

struct AblationRow {
    std::string name;
    double mean_accuracy = 0.0; // mean over seeds of last-10-round accuracy
};

// Four-variant grid {global_only, framework, refinement, full} over num_seeds
// consecutive seeds with shared partitions; rows sorted best first.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::string& out_root,
                                      int num_seeds = 5);

struct ConvergenceTrajectory {
    double beta = 0.0;
    double head_mean = 0.0;  // mean grad^2 over first 20% of rounds, seed-avg
    double tail_mean = 0.0;  // same over last 20%
    bool tail_ok = false;    // tail <= 25% head for every seed
    bool diverged = false;   // mean loss increasing
    bool noop = false;       // flat trajectory (beta == 0)
};

struct ConvergenceResult {
    std::vector<ConvergenceTrajectory> trajectories; // beta, beta/2, beta/4
    bool tail_ok_all = false;
    bool plateau_monotone = false; // tail level non-increasing as beta halves
};

ConvergenceResult run_convergence(const ExperimentConfig& cfg, const std::string& out_root,
                                  int num_seeds = 3);

struct LengthSweepResult {
    double fixed_accuracy = 0.0;   // 3-seed mean, fixed local length
    double random_accuracy = 0.0;  // 3-seed mean, uniform{4..64} lengths
};

LengthSweepResult run_length_sweep(const ExperimentConfig& cfg, const std::string& out_root,
                                   int num_seeds = 3);

struct CheckSuite {
    std::string name;
    int cases = 0;
    int failures = 0;
    double max_residual = 0.0;
};

struct CheckReport {
    std::vector<CheckSuite> suites;
    bool passed = false;
    std::string text; // human-readable per-suite table
};

// Property suites: projector, contraction, refinement oracle, gradient FD,
// gradient bounds, aggregation, wire audit. inject_projector_fault breaks the
// projector's symmetry on purpose; the suite must then fail (negative
// control).
CheckReport run_checks(bool inject_projector_fault = false);

} // namespace promptfed
