#pragma once

#include "promptfed/data.hpp"
#include "promptfed/encoder.hpp"
#include "promptfed/matrix.hpp"
#include "promptfed/objectives.hpp"
#include "promptfed/prompt.hpp"
#include "promptfed/refine.hpp"

#include <cstdint>
#include <vector>

namespace promptfed {

struct TrainingConfig {
    std::uint64_t master_seed = 1;
    int num_clients = 10;
    int rounds = 50;
    // 0 selects one local epoch, ceil(h_l / batch_size) steps.
    int local_steps = 0;
    double beta = 0.01;
    double lambda = 0.6;
    double gamma = 0.8;
    // Softmax temperature; cosine logits live in [-1, 1], so a small value is
    // needed for any usable gradient signal on the synthetic benchmark.
    double mu = 0.005;
    int global_len = 8;
    int local_len = 8;
    bool heterogeneous_lengths = false; // S_l ~ uniform{4..64} per client
    double participation_fraction = 1.0;
    int batch_size = 16;
    int workers = 1;
    // Default refreshes the projector and the refined prompt once per round
    // from the broadcast global prompt; per-step mode recomputes both inside
    // the local loop.
    bool per_step_projector = false;
    double init_std = 0.02;
    // Amplitude of the frozen label embeddings; larger values keep the class
    // signal visible after mean pooling over long sequences.
    double token_scale = 2.0;
    // Scale of the frozen encoder map (W and b together). Cosine-based CE is
    // nearly invariant to it; the divergence losses scale with it.
    double feature_scale = 0.15;

    // Ablation switches, cumulative from the global-only baseline up.
    bool global_only = false;
    bool disable_refinement = false;
    bool disable_str = false;
    bool disable_sep = false;
    bool detach_override = false;

    SyntheticTask task;
    PartitionSpec partition;
};

struct ClientState {
    int id = 0;
    ClientShard shard;
    int h_l = 0;     // train-split size
    int local_len = 0;
    Matrix g_c;      // S_l x m, never uploaded
};

struct ClientRoundStats {
    int client_id = 0;
    bool participated = false;
    LossBreakdown loss;
    double accuracy = 0.0;
};

struct RoundReport {
    int round = 0;
    std::vector<int> participating;
    std::vector<ClientRoundStats> clients; // ascending id, all clients
    LossBreakdown mean_loss;               // over participants
    // Total loss at each participant's first local step, i.e. at the broadcast
    // prompts before any update this round; the natural divergence signal.
    double pre_step_loss = 0.0;
    double mean_accuracy = 0.0;            // over all clients
    double global_grad_norm = 0.0;
    // Deterministic arithmetic-work share of projector + refine (reported in
    // rounds.csv, independent of wall clock and worker count).
    double refine_work_fraction = 0.0;
    // Measured wall-clock share and round duration (timing.csv only).
    double refine_wall_fraction = 0.0;
    double round_wall_ms = 0.0;
};

struct ServerState {
    Matrix g_s;
    int round = 0;
    std::vector<RoundReport> history;
};

struct LocalUpdateResult {
    Matrix g_s;
    Matrix g_c;
    LossBreakdown mean_loss;
    double first_step_loss = 0.0;
    int steps = 0;
    double refine_work = 0.0;
    double total_work = 0.0;
    double refine_seconds = 0.0;
    double total_seconds = 0.0;
};

// Little-endian upload message: {client_id, round, h_l, rows, cols} as u32
// followed by rows*cols float64. Carries the global prompt only.
std::vector<std::uint8_t> encode_upload(std::uint32_t client_id, std::uint32_t round,
                                        std::uint32_t h_l, const Matrix& g_s);

struct UploadMessage {
    std::uint32_t client_id = 0;
    std::uint32_t round = 0;
    std::uint32_t h_l = 0;
    Matrix payload;
};

UploadMessage decode_upload(const std::vector<std::uint8_t>& bytes);

// Local SGD on the joint objective; returns the updated prompt pair without
// touching the client. round_proj may be null in per-step mode.
LocalUpdateResult local_update(const ClientState& client, const Matrix& g_s_in,
                               const SubspaceProjector* round_proj, int steps, int round,
                               const TrainingConfig& cfg, const TokenTable& table,
                               const FrozenEncoder& enc);

// Sample-size weighted mean with normalized weights.
Matrix aggregate(const std::vector<std::pair<Matrix, int>>& uploads);

// One synchronous round: sample participants, run local updates (possibly on
// several workers), aggregate uploads in ascending client order, evaluate
// every client. wire_log, when set, receives every client->server payload.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainingConfig& cfg, const TokenTable& table,
                      const FrozenEncoder& enc,
                      std::vector<std::vector<std::uint8_t>>* wire_log = nullptr);

struct TrainingResult {
    ServerState server;
    std::vector<ClientState> clients;
};

// Builds the synthetic task, partitions it, initializes prompts, and runs the
// full round loop. Deterministic in cfg.master_seed for any worker count.
TrainingResult run_training(const TrainingConfig& cfg,
                            std::vector<std::vector<std::uint8_t>>* wire_log = nullptr);

// Per-client test accuracy with local-prompt features (global features in
// global-only mode).
double evaluate_client(const ClientState& client, const Matrix& g_s,
                       const TrainingConfig& cfg, const TokenTable& table,
                       const FrozenEncoder& enc);

} // namespace promptfed
