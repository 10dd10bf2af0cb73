#include "promptfed/federation.hpp"
#include "promptfed/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <atomic>
#include <thread>

namespace promptfed {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Deterministic arithmetic-work model (multiply counts) used for the
// wall-clock-free refine share in round reports.
double work_projector(int m) { return 26.0 * m * m * m; }
double work_refine(int s_l, int m) { return 2.0 * s_l * static_cast<double>(m) * m; }
double work_step(int s_l, int m, int classes, int batch) {
    (void)s_l;
    return 2.0 * m * static_cast<double>(m) * (4 * classes + 2 * batch + 4);
}

Matrix gaussian_matrix(int rows, int cols, RngStream rng, double std_dev) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = std_dev * rng.next_gaussian();
    return m;
}

Batch draw_batch(const ClientState& client, RngStream& rng, int batch_size) {
    Batch batch;
    batch.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        const Sample& s =
            client.shard.train.samples[rng.next_below(client.shard.train.samples.size())];
        batch.push_back(LabeledExample{s.features, s.label});
    }
    return batch;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::vector<int> sample_participants(const TrainingConfig& cfg, int round) {
    const int m = cfg.num_clients;
    const int take = static_cast<int>(std::ceil(cfg.participation_fraction * m));
    if (cfg.participation_fraction <= 0.0 || cfg.participation_fraction > 1.0)
        throw std::invalid_argument("run_round: participation_fraction must be in (0,1]");
    std::vector<int> ids(m);
    for (int i = 0; i < m; ++i) ids[i] = i;
    RngStream rng = RngStream::derive(cfg.master_seed, "participation", round, m);
    for (int i = 0; i < take; ++i)
        std::swap(ids[i], ids[i + static_cast<int>(rng.next_below(m - i))]);
    ids.resize(take);
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace

std::vector<std::uint8_t> encode_upload(std::uint32_t client_id, std::uint32_t round,
                                        std::uint32_t h_l, const Matrix& g_s) {
    std::vector<std::uint8_t> out;
    out.reserve(20 + 8 * static_cast<std::size_t>(g_s.rows()) * g_s.cols());
    put_u32(out, client_id);
    put_u32(out, round);
    put_u32(out, h_l);
    put_u32(out, static_cast<std::uint32_t>(g_s.rows()));
    put_u32(out, static_cast<std::uint32_t>(g_s.cols()));
    for (int i = 0; i < g_s.rows(); ++i)
        for (int j = 0; j < g_s.cols(); ++j) {
            std::uint64_t bits;
            const double v = g_s(i, j);
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b)
                out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
        }
    return out;
}

UploadMessage decode_upload(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20) throw std::invalid_argument("decode_upload: truncated header");
    UploadMessage msg;
    msg.client_id = get_u32(bytes.data());
    msg.round = get_u32(bytes.data() + 4);
    msg.h_l = get_u32(bytes.data() + 8);
    const std::uint32_t rows = get_u32(bytes.data() + 12);
    const std::uint32_t cols = get_u32(bytes.data() + 16);
    if (bytes.size() != 20 + 8ull * rows * cols)
        throw std::invalid_argument("decode_upload: payload size mismatch");
    msg.payload = Matrix(static_cast<int>(rows), static_cast<int>(cols));
    const std::uint8_t* p = bytes.data() + 20;
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
            p += 8;
            double v;
            std::memcpy(&v, &bits, 8);
            msg.payload(static_cast<int>(i), static_cast<int>(j)) = v;
        }
    return msg;
}

LocalUpdateResult local_update(const ClientState& client, const Matrix& g_s_in,
                               const SubspaceProjector* round_proj, int steps, int round,
                               const TrainingConfig& cfg, const TokenTable& table,
                               const FrozenEncoder& enc) {
    const double t0 = now_seconds();
    LocalUpdateResult out;
    out.g_s = g_s_in;
    out.g_c = client.g_c;
    out.steps = steps;
    if (steps < 0) throw std::invalid_argument("local_update: steps must be >= 0");
    if (steps == 0) return out;

    const int m = g_s_in.cols();
    const int s_l = client.g_c.rows();
    const bool refinement_on = !cfg.disable_refinement && !cfg.global_only;

    ObjectiveConfig ocfg;
    ocfg.mu = cfg.mu;
    ocfg.gamma = (cfg.disable_sep || cfg.global_only) ? 0.0 : cfg.gamma;
    ocfg.detach_refined = !cfg.detach_override;

    RngStream batch_rng =
        RngStream::derive(cfg.master_seed, "client-batch", client.id, round);

    SubspaceProjector local_proj;
    const SubspaceProjector* proj = round_proj;
    Matrix refined(s_l, m);
    double refine_sec = 0.0;
    auto refresh = [&](const Matrix& from_global) {
        const double r0 = now_seconds();
        if (cfg.per_step_projector || proj == nullptr) {
            local_proj = build_projector(from_global, cfg.lambda, round);
            proj = &local_proj;
            out.refine_work += work_projector(m);
        }
        refined = refine(out.g_c, *proj);
        out.refine_work += work_refine(s_l, m);
        refine_sec += now_seconds() - r0;
    };
    if (refinement_on) refresh(g_s_in);

    LossBreakdown sum;
    for (int o = 0; o < steps; ++o) {
        if (refinement_on && o > 0 && (cfg.per_step_projector || !ocfg.detach_refined)) {
            if (cfg.per_step_projector) proj = nullptr;
            refresh(out.g_s);
        }
        Batch batch = draw_batch(client, batch_rng, cfg.batch_size);

        LossBreakdown lb = total_loss(out.g_s, out.g_c, refined, batch, table, enc, ocfg);
        GradientPair gp;
        if (refinement_on && !ocfg.detach_refined)
            gp = gradients(out.g_s, out.g_c, *proj, batch, table, enc, ocfg);
        else
            gp = gradients_fixed_refined(out.g_s, out.g_c, refined, batch, table, enc, ocfg);

        if (cfg.disable_str || cfg.global_only) {
            std::vector<double> sg = stretch_gradient_row(out.g_c, refined, enc);
            for (int i = 0; i < s_l; ++i)
                for (int j = 0; j < m; ++j) gp.d_local(i, j) -= sg[j];
            lb.total -= lb.str;
            lb.str = 0.0;
        }
        if (cfg.global_only) {
            lb.total -= lb.ce_local;
            lb.ce_local = 0.0;
            gp.d_local = Matrix(s_l, m);
        }
        if (o == 0) out.first_step_loss = lb.total;
        sum.ce_local += lb.ce_local;
        sum.ce_global += lb.ce_global;
        sum.str += lb.str;
        sum.sep += lb.sep;
        sum.total += lb.total;
        out.total_work += work_step(s_l, m, table.num_classes(), cfg.batch_size);

        out.g_s -= gp.d_global * cfg.beta;
        out.g_c -= gp.d_local * cfg.beta;
    }
    const double inv = 1.0 / steps;
    sum.ce_local *= inv;
    sum.ce_global *= inv;
    sum.str *= inv;
    sum.sep *= inv;
    sum.total *= inv;
    out.mean_loss = sum;
    out.total_work += out.refine_work;
    out.refine_seconds = refine_sec;
    out.total_seconds = now_seconds() - t0;
    return out;
}

Matrix aggregate(const std::vector<std::pair<Matrix, int>>& uploads) {
    if (uploads.empty()) throw std::invalid_argument("aggregate: empty round");
    double total = 0.0;
    for (const auto& [g, h] : uploads) {
        if (h <= 0) throw std::invalid_argument("aggregate: sample counts must be positive");
        if (g.rows() != uploads.front().first.rows() ||
            g.cols() != uploads.front().first.cols())
            throw std::invalid_argument("aggregate: shape mismatch");
        total += h;
    }
    Matrix out(uploads.front().first.rows(), uploads.front().first.cols());
    for (const auto& [g, h] : uploads) out += g * (h / total);
    return out;
}

double evaluate_client(const ClientState& client, const Matrix& g_s,
                       const TrainingConfig& cfg, const TokenTable& table,
                       const FrozenEncoder& enc) {
    const int m = g_s.cols();
    const Matrix zero_global(g_s.rows(), m);
    const Matrix zero_local(client.g_c.rows(), m);
    Matrix refined(client.g_c.rows(), m);
    if (!cfg.disable_refinement && !cfg.global_only)
        refined = refine(client.g_c, build_projector(g_s, cfg.lambda));

    int hit = 0;
    for (const Sample& s : client.shard.test.samples) {
        std::vector<double> probs =
            cfg.global_only
                ? assembly_probabilities(g_s, zero_local, zero_local, s.features, table, enc,
                                         cfg.mu)
                : assembly_probabilities(zero_global, client.g_c, refined, s.features, table,
                                         enc, cfg.mu);
        int best = 0;
        for (int c = 1; c < static_cast<int>(probs.size()); ++c)
            if (probs[c] > probs[best]) best = c;
        if (best == s.label) ++hit;
    }
    if (client.shard.test.samples.empty())
        throw std::runtime_error("evaluate_client: empty test shard");
    return static_cast<double>(hit) / client.shard.test.samples.size();
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TrainingConfig& cfg, const TokenTable& table,
                      const FrozenEncoder& enc,
                      std::vector<std::vector<std::uint8_t>>* wire_log) {
    const double t0 = now_seconds();
    const int round = server.round;
    std::vector<int> participants = sample_participants(cfg, round);

    // Per-round projector, shared by every participant (they all refine
    // against the same broadcast prompt).
    SubspaceProjector round_proj;
    double proj_seconds = 0.0;
    double proj_work = 0.0;
    const bool refinement_on = !cfg.disable_refinement && !cfg.global_only;
    if (refinement_on && !cfg.per_step_projector) {
        const double p0 = now_seconds();
        round_proj = build_projector(server.g_s, cfg.lambda, round);
        proj_seconds = now_seconds() - p0;
        proj_work = work_projector(server.g_s.cols());
    }
    const SubspaceProjector* proj_ptr =
        (refinement_on && !cfg.per_step_projector) ? &round_proj : nullptr;

    std::vector<LocalUpdateResult> results(participants.size());
    auto run_one = [&](std::size_t slot) {
        const ClientState& client = clients[participants[slot]];
        const int steps = cfg.local_steps > 0
                              ? cfg.local_steps
                              : (client.h_l + cfg.batch_size - 1) / cfg.batch_size;
        results[slot] =
            local_update(client, server.g_s, proj_ptr, steps, round, cfg, table, enc);
    };
    const int workers = std::max(1, cfg.workers);
    if (workers == 1 || participants.size() <= 1) {
        for (std::size_t i = 0; i < participants.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        const std::size_t n = std::min<std::size_t>(workers, participants.size());
        for (std::size_t w = 0; w < n; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < participants.size();
                     i = next.fetch_add(1))
                    run_one(i);
            });
        for (std::thread& t : pool) t.join();
    }

    // Uploads travel through the wire encoding; aggregation reads the decoded
    // payloads in ascending client order.
    std::vector<std::pair<Matrix, int>> uploads;
    for (std::size_t i = 0; i < participants.size(); ++i) {
        const ClientState& client = clients[participants[i]];
        std::vector<std::uint8_t> bytes = encode_upload(
            static_cast<std::uint32_t>(client.id), static_cast<std::uint32_t>(round),
            static_cast<std::uint32_t>(client.h_l), results[i].g_s);
        if (wire_log) wire_log->push_back(bytes);
        UploadMessage msg = decode_upload(bytes);
        uploads.emplace_back(std::move(msg.payload), static_cast<int>(msg.h_l));
    }
    const Matrix broadcast = server.g_s;
    server.g_s = aggregate(uploads);

    // Stationarity estimate: sample-weighted mean of per-step update
    // directions recovered from the uploads.
    double grad_norm = 0.0;
    if (cfg.beta > 0.0) {
        Matrix acc(broadcast.rows(), broadcast.cols());
        double total_h = 0.0;
        for (std::size_t i = 0; i < participants.size(); ++i)
            total_h += clients[participants[i]].h_l;
        for (std::size_t i = 0; i < participants.size(); ++i) {
            if (results[i].steps == 0) continue;
            const double w = clients[participants[i]].h_l / total_h;
            acc += (broadcast - results[i].g_s) *
                   (w / (cfg.beta * results[i].steps));
        }
        grad_norm = frobenius_norm(acc);
    }

    // Persist local prompts for participants only.
    for (std::size_t i = 0; i < participants.size(); ++i)
        clients[participants[i]].g_c = std::move(results[i].g_c);

    RoundReport report;
    report.round = round;
    report.participating = participants;
    report.global_grad_norm = grad_norm;

    double refine_work = proj_work, total_work = proj_work;
    double refine_sec = proj_seconds, client_sec = proj_seconds;
    for (const LocalUpdateResult& r : results) {
        refine_work += r.refine_work;
        total_work += r.total_work;
        refine_sec += r.refine_seconds;
        client_sec += r.total_seconds;
        report.mean_loss.ce_local += r.mean_loss.ce_local;
        report.mean_loss.ce_global += r.mean_loss.ce_global;
        report.mean_loss.str += r.mean_loss.str;
        report.mean_loss.sep += r.mean_loss.sep;
        report.mean_loss.total += r.mean_loss.total;
        report.pre_step_loss += r.first_step_loss;
    }
    if (!results.empty()) {
        const double inv = 1.0 / results.size();
        report.mean_loss.ce_local *= inv;
        report.mean_loss.ce_global *= inv;
        report.mean_loss.str *= inv;
        report.mean_loss.sep *= inv;
        report.mean_loss.total *= inv;
        report.pre_step_loss *= inv;
    }
    report.refine_work_fraction = total_work > 0.0 ? refine_work / total_work : 0.0;

    std::size_t slot = 0;
    for (int id = 0; id < cfg.num_clients; ++id) {
        ClientRoundStats stats;
        stats.client_id = id;
        stats.participated = slot < participants.size() && participants[slot] == id;
        if (stats.participated) stats.loss = results[slot++].mean_loss;
        stats.accuracy = evaluate_client(clients[id], server.g_s, cfg, table, enc);
        report.mean_accuracy += stats.accuracy;
        report.clients.push_back(std::move(stats));
    }
    report.mean_accuracy /= cfg.num_clients;

    report.round_wall_ms = (now_seconds() - t0) * 1000.0;
    report.refine_wall_fraction = client_sec > 0.0 ? refine_sec / client_sec : 0.0;
    server.round += 1;
    server.history.push_back(report);
    return server.history.back();
}

TrainingResult run_training(const TrainingConfig& cfg,
                            std::vector<std::vector<std::uint8_t>>* wire_log) {
    if (cfg.num_clients < 1 || cfg.rounds < 0)
        throw std::invalid_argument("run_training: invalid client or round count");
    if (cfg.batch_size < 1) throw std::invalid_argument("run_training: batch_size must be >= 1");

    SyntheticTask task = cfg.task;
    task.seed = RngStream::derive(cfg.master_seed, "task", 0, 0).next_u64();
    SyntheticData data = generate(task);

    PartitionSpec part = cfg.partition;
    part.num_clients = cfg.num_clients;
    part.seed = RngStream::derive(cfg.master_seed, "partition", 0, 0).next_u64();
    std::vector<ClientShard> shards = partition_task(data.train, data.test, part);

    const int m = task.feature_dim;
    TokenTable table(m, task.num_classes, cfg.master_seed, cfg.token_scale);
    FrozenEncoder enc(m, cfg.master_seed, cfg.feature_scale);

    TrainingResult out;
    out.server.g_s = gaussian_matrix(
        cfg.global_len, m, RngStream::derive(cfg.master_seed, "init-global-prompt", m, 0),
        cfg.init_std);
    for (int id = 0; id < cfg.num_clients; ++id) {
        ClientState c;
        c.id = id;
        c.shard = std::move(shards[id]);
        c.h_l = static_cast<int>(c.shard.train.samples.size());
        if (cfg.heterogeneous_lengths) {
            RngStream lrng = RngStream::derive(cfg.master_seed, "local-length", id, 0);
            c.local_len = 4 + static_cast<int>(lrng.next_below(61)); // uniform{4..64}
        } else {
            c.local_len = cfg.local_len;
        }
        c.g_c = gaussian_matrix(
            c.local_len, m, RngStream::derive(cfg.master_seed, "init-local-prompt", id, m),
            cfg.init_std);
        out.clients.push_back(std::move(c));
    }

    for (int z = 0; z < cfg.rounds; ++z)
        run_round(out.server, out.clients, cfg, table, enc, wire_log);
    return out;
}

} // namespace promptfed
