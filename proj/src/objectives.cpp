#include "promptfed/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace promptfed {

namespace {

std::vector<double> pooled_difference(const Matrix& a, const Matrix& b,
                                      const FrozenEncoder& enc) {
    std::vector<double> fa = enc.encode_prompt(a);
    std::vector<double> fb = enc.encode_prompt(b);
    for (std::size_t i = 0; i < fa.size(); ++i) fa[i] -= fb[i];
    return fa;
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Per-class pooled vectors for the assembly [start|global|local|refined|label|suffix|end].
// All prompt rows enter through the mean, so the pooled vector for class c is
// (shared_sum + label_c) / T.
struct AssemblyFeatures {
    std::vector<std::vector<double>> text;  // per-class encoder features
    int pooled_rows = 0;                    // T, the true sequence length
};

AssemblyFeatures class_features(const Matrix& global, const Matrix& local,
                                const Matrix& refined, const TokenTable& table,
                                const FrozenEncoder& enc) {
    const int m = table.dim();
    if (global.cols() != m || local.cols() != m || refined.cols() != m)
        throw std::invalid_argument("class_features: embedding dim mismatch");
    if (local.rows() != refined.rows())
        throw std::invalid_argument("class_features: local/refined row mismatch");

    std::vector<double> shared(m, 0.0);
    auto add_rows = [&](const Matrix& block) {
        for (int i = 0; i < block.rows(); ++i)
            for (int j = 0; j < m; ++j) shared[j] += block(i, j);
    };
    add_rows(global);
    add_rows(local);
    add_rows(refined);
    for (int j = 0; j < m; ++j)
        shared[j] += table.start()[j] + table.suffix()[j] + table.end()[j];

    AssemblyFeatures out;
    out.pooled_rows = kSpecialTokenCount + global.rows() + 2 * local.rows();
    std::vector<double> pooled(m);
    for (int c = 0; c < table.num_classes(); ++c) {
        const std::vector<double>& lab = table.label(c);
        for (int j = 0; j < m; ++j)
            pooled[j] = (shared[j] + lab[j]) / static_cast<double>(out.pooled_rows);
        out.text.push_back(enc.encode_pooled(pooled));
    }
    return out;
}

// Batch-mean cross entropy of one assembly role. When grad_row is non-null it
// receives the gradient with respect to any single prompt row of the trained
// block (identical across rows of that block).
double ce_term(const AssemblyFeatures& feats, const Batch& batch,
               const FrozenEncoder& enc, double mu, std::vector<double>* grad_row) {
    const int m = enc.dim();
    const int num_classes = static_cast<int>(feats.text.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    // Cotangents on the class features, summed over the batch; the backprop
    // through the encoder is linear in them so one pull per class suffices.
    std::vector<std::vector<double>> cot;
    if (grad_row) cot.assign(num_classes, std::vector<double>(m, 0.0));

    double loss = 0.0;
    for (const LabeledExample& ex : batch) {
        if (ex.label < 0 || ex.label >= num_classes)
            throw std::invalid_argument("ce_term: label out of range");
        std::vector<double> q = enc.encode_image(ex.image);
        std::vector<double> probs = class_probabilities(feats.text, q, mu);
        loss += cross_entropy(probs, ex.label);
        if (!grad_row) continue;

        const double qn = norm2(q);
        for (int c = 0; c < num_classes; ++c) {
            const std::vector<double>& t = feats.text[c];
            const double tn = norm2(t);
            const double s = cosine_similarity(t, q);
            const double dls = (probs[c] - (c == ex.label ? 1.0 : 0.0)) / mu;
            for (int j = 0; j < m; ++j)
                cot[c][j] += dls * (q[j] / (tn * qn) - s * t[j] / (tn * tn));
        }
    }

    if (grad_row) {
        grad_row->assign(m, 0.0);
        const double scale = inv_b / static_cast<double>(feats.pooled_rows);
        for (int c = 0; c < num_classes; ++c) {
            std::vector<double> g = enc.backprop_pooled(feats.text[c], cot[c]);
            for (int j = 0; j < m; ++j) (*grad_row)[j] += scale * g[j];
        }
    }
    return loss * inv_b;
}

void add_to_rows(Matrix& dest, const std::vector<double>& row) {
    for (int i = 0; i < dest.rows(); ++i)
        for (int j = 0; j < dest.cols(); ++j) dest(i, j) += row[j];
}

void check_inputs(const Matrix& g_s, const Matrix& g_c, const Matrix& refined,
                  const Batch& batch, const ObjectiveConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("objective: batch must be nonempty");
    if (cfg.gamma < 0.0) throw std::invalid_argument("objective: gamma must be >= 0");
    if (cfg.mu <= 0.0) throw std::invalid_argument("objective: mu must be > 0");
    if (g_s.cols() != g_c.cols() || g_c.rows() != refined.rows() ||
        g_c.cols() != refined.cols())
        throw std::invalid_argument("objective: prompt shape mismatch");
}

} // namespace

std::vector<double> assembly_probabilities(const Matrix& global, const Matrix& local,
                                           const Matrix& refined,
                                           const std::vector<double>& image,
                                           const TokenTable& table, const FrozenEncoder& enc,
                                           double mu) {
    AssemblyFeatures feats = class_features(global, local, refined, table, enc);
    return class_probabilities(feats.text, enc.encode_image(image), mu);
}

double stretch_loss(const Matrix& g_c, const Matrix& g_c_refined, const FrozenEncoder& enc) {
    if (g_c.rows() != g_c_refined.rows() || g_c.cols() != g_c_refined.cols())
        throw std::invalid_argument("stretch_loss: shape mismatch");
    std::vector<double> e = pooled_difference(g_c, g_c_refined, enc);
    double s = 0.0;
    for (double x : e) s += x * x;
    return s;
}

double separate_loss(const Matrix& g_c, const Matrix& g_s, double gamma,
                     const FrozenEncoder& enc) {
    if (gamma < 0.0) throw std::invalid_argument("separate_loss: gamma must be >= 0");
    const double dist = norm2(pooled_difference(g_c, g_s, enc));
    return dist >= gamma ? 0.0 : gamma - dist;
}

LossBreakdown total_loss(const Matrix& g_s, const Matrix& g_c, const Matrix& refined,
                         const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                         const ObjectiveConfig& cfg) {
    check_inputs(g_s, g_c, refined, batch, cfg);
    const Matrix zero_global(g_s.rows(), g_s.cols());
    const Matrix zero_local(g_c.rows(), g_c.cols());

    LossBreakdown out;
    out.ce_local = ce_term(class_features(zero_global, g_c, refined, table, enc), batch,
                           enc, cfg.mu, nullptr);
    out.ce_global = ce_term(class_features(g_s, zero_local, zero_local, table, enc), batch,
                            enc, cfg.mu, nullptr);
    out.str = stretch_loss(g_c, refined, enc);
    out.sep = separate_loss(g_c, g_s, cfg.gamma, enc);
    out.total = out.ce_local + out.ce_global + out.str + out.sep;
    return out;
}

LossBreakdown total_loss(const Matrix& g_s, const Matrix& g_c, const SubspaceProjector& proj,
                         const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                         const ObjectiveConfig& cfg) {
    return total_loss(g_s, g_c, refine(g_c, proj), batch, table, enc, cfg);
}

std::vector<double> stretch_gradient_row(const Matrix& g_c, const Matrix& g_c_refined,
                                         const FrozenEncoder& enc) {
    if (g_c.rows() != g_c_refined.rows() || g_c.cols() != g_c_refined.cols())
        throw std::invalid_argument("stretch_gradient_row: shape mismatch");
    std::vector<double> t = enc.encode_prompt(g_c);
    std::vector<double> e = pooled_difference(g_c, g_c_refined, enc);
    for (double& x : e) x *= 2.0;
    std::vector<double> g = enc.backprop_pooled(t, e);
    for (double& x : g) x /= static_cast<double>(g_c.rows());
    return g;
}

std::vector<double> separate_gradient_row(const Matrix& g_c, const Matrix& g_s, double gamma,
                                          const FrozenEncoder& enc) {
    std::vector<double> delta = pooled_difference(g_c, g_s, enc);
    const double dist = norm2(delta);
    if (dist <= 0.0 || dist >= gamma) return std::vector<double>(g_c.cols(), 0.0);
    for (double& x : delta) x /= -dist;
    std::vector<double> g = enc.backprop_pooled(enc.encode_prompt(g_c), delta);
    for (double& x : g) x /= static_cast<double>(g_c.rows());
    return g;
}

GradientPair gradients_fixed_refined(const Matrix& g_s, const Matrix& g_c,
                                     const Matrix& refined, const Batch& batch,
                                     const TokenTable& table, const FrozenEncoder& enc,
                                     const ObjectiveConfig& cfg) {
    check_inputs(g_s, g_c, refined, batch, cfg);
    const int m = g_c.cols();
    const int s_l = g_c.rows();
    const Matrix zero_global(g_s.rows(), m);
    const Matrix zero_local(s_l, m);

    GradientPair out{Matrix(g_s.rows(), m), Matrix(s_l, m)};

    std::vector<double> row;
    ce_term(class_features(zero_global, g_c, refined, table, enc), batch, enc, cfg.mu, &row);
    add_to_rows(out.d_local, row);
    ce_term(class_features(g_s, zero_local, zero_local, table, enc), batch, enc, cfg.mu, &row);
    add_to_rows(out.d_global, row);

    add_to_rows(out.d_local, stretch_gradient_row(g_c, refined, enc));
    add_to_rows(out.d_local, separate_gradient_row(g_c, g_s, cfg.gamma, enc));

    out.d_global.require_finite("gradients: d_global");
    out.d_local.require_finite("gradients: d_local");
    return out;
}

GradientPair gradients(const Matrix& g_s, const Matrix& g_c, const SubspaceProjector& proj,
                       const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                       const ObjectiveConfig& cfg) {
    Matrix refined = refine(g_c, proj);
    GradientPair out = gradients_fixed_refined(g_s, g_c, refined, batch, table, enc, cfg);
    if (!cfg.detach_refined) {
        // Extra stretch path: refined = g_c R, so the refined-side cotangent
        // maps back through R (symmetric).
        const int m = g_c.cols();
        std::vector<double> e = pooled_difference(g_c, refined, enc);
        std::vector<double> tr = enc.encode_prompt(refined);
        std::vector<double> cot(m);
        for (int j = 0; j < m; ++j) cot[j] = -2.0 * e[j];
        std::vector<double> v = enc.backprop_pooled(tr, cot);
        std::vector<double> mapped(m, 0.0);
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += proj.projection(i, j) * v[j];
            mapped[i] = s / static_cast<double>(g_c.rows());
        }
        add_to_rows(out.d_local, mapped);
    }
    return out;
}

} // namespace promptfed
