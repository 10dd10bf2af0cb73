#include "promptfed/encoder.hpp"
#include "promptfed/rng.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace promptfed {

namespace {
std::atomic<std::uint64_t> g_ce_clamps{0};
} // namespace

FrozenEncoder::FrozenEncoder(int dim, std::uint64_t seed, double feature_scale)
    : dim_(dim), weight_(dim, dim) {
    if (dim < 1) throw std::invalid_argument("FrozenEncoder: dim must be positive");
    if (feature_scale <= 0.0)
        throw std::invalid_argument("FrozenEncoder: feature_scale must be positive");
    RngStream wrng = RngStream::derive(seed, "encoder-weight");
    const double scale = feature_scale / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            weight_(i, j) = scale * wrng.next_gaussian();
    RngStream brng = RngStream::derive(seed, "encoder-bias");
    bias_.resize(dim);
    for (double& b : bias_) b = 0.1 * feature_scale * brng.next_gaussian();
    weight_spectral_ = spectral_norm(weight_);
}

std::vector<double> FrozenEncoder::encode_pooled(std::span<const double> pooled) const {
    std::vector<double> out(dim_);
    for (int i = 0; i < dim_; ++i) {
        double s = bias_[i];
        const double* wi = weight_.data() + static_cast<std::size_t>(i) * dim_;
        for (int j = 0; j < dim_; ++j) s += wi[j] * pooled[j];
        out[i] = std::tanh(s);
    }
    return out;
}

std::vector<double> FrozenEncoder::encode_sequence(const PromptAssembly& seq) const {
    if (seq.sequence.cols() != dim_)
        throw std::invalid_argument("encode_sequence: embedding dim mismatch");
    std::vector<double> pooled(dim_, 0.0);
    for (int r = 0; r < seq.true_length; ++r) {
        const double* row = seq.sequence.data() + static_cast<std::size_t>(r) * dim_;
        for (int j = 0; j < dim_; ++j) pooled[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(seq.true_length);
    for (double& x : pooled) x *= inv;
    return encode_pooled(pooled);
}

std::vector<double> FrozenEncoder::encode_prompt(const Matrix& prompt) const {
    if (prompt.cols() != dim_)
        throw std::invalid_argument("encode_prompt: embedding dim mismatch");
    std::vector<double> pooled(dim_, 0.0);
    for (int r = 0; r < prompt.rows(); ++r) {
        const double* row = prompt.data() + static_cast<std::size_t>(r) * dim_;
        for (int j = 0; j < dim_; ++j) pooled[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(prompt.rows());
    for (double& x : pooled) x *= inv;
    return encode_pooled(pooled);
}

std::vector<double> FrozenEncoder::encode_image(std::span<const double> q) const {
    if (static_cast<int>(q.size()) != dim_)
        throw std::invalid_argument("encode_image: feature dim mismatch");
    return encode_pooled(q);
}

double FrozenEncoder::lipschitz_bound(int pooled_rows) const {
    // Mean pooling contracts the Frobenius norm by sqrt(rows) in the worst
    // case (identical rows); tanh is 1-Lipschitz.
    return weight_spectral_ / std::sqrt(static_cast<double>(pooled_rows));
}

std::vector<double> FrozenEncoder::backprop_pooled(const std::vector<double>& feature,
                                                   const std::vector<double>& cotangent) const {
    std::vector<double> gated(dim_);
    for (int i = 0; i < dim_; ++i) gated[i] = cotangent[i] * (1.0 - feature[i] * feature[i]);
    std::vector<double> out(dim_, 0.0);
    for (int i = 0; i < dim_; ++i) {
        const double gi = gated[i];
        if (gi == 0.0) continue;
        const double* wi = weight_.data() + static_cast<std::size_t>(i) * dim_;
        for (int j = 0; j < dim_; ++j) out[j] += gi * wi[j];
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double na = 0.0, nb = 0.0, d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        d += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::domain_error("cosine_similarity: zero-norm feature");
    return d / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> class_probabilities(const std::vector<std::vector<double>>& text_features,
                                        const std::vector<double>& image_feature, double mu) {
    if (mu <= 0.0) throw std::invalid_argument("class_probabilities: mu must be positive");
    if (text_features.empty()) throw std::invalid_argument("class_probabilities: no classes");
    std::vector<double> logits(text_features.size());
    for (std::size_t c = 0; c < text_features.size(); ++c)
        logits[c] = cosine_similarity(text_features[c], image_feature) / mu;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : logits) v /= z;
    return logits;
}

double cross_entropy(const std::vector<double>& probs, int label) {
    if (label < 0 || label >= static_cast<int>(probs.size()))
        throw std::out_of_range("cross_entropy: label out of range");
    double p = probs[label];
    if (p < 1e-12) {
        p = 1e-12;
        g_ce_clamps.fetch_add(1, std::memory_order_relaxed);
    }
    return -std::log(p);
}

std::uint64_t ce_clamp_count() {
    return g_ce_clamps.load(std::memory_order_relaxed);
}

} // namespace promptfed
