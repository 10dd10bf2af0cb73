#pragma once

#include "promptfed/matrix.hpp"
#include "promptfed/prompt.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace promptfed {

// Frozen stand-in for the text/image encoders: mean-pool over rows, fixed
// linear map, elementwise tanh. Differentiable in the prompt rows with a
// closed-form Jacobian.
class FrozenEncoder {
public:
    // feature_scale multiplies both W and b; for small scales the map is close
    // to linear, so cosine-based classification is nearly unaffected while
    // feature-space distances (and the divergence losses) shrink with it.
    FrozenEncoder(int dim, std::uint64_t seed, double feature_scale = 1.0);

    int dim() const { return dim_; }
    const Matrix& weight() const { return weight_; }
    const std::vector<double>& bias() const { return bias_; }

    // tanh(W * v + b) for an already pooled vector v.
    std::vector<double> encode_pooled(std::span<const double> pooled) const;

    // Pools rows 0..true_length-1 of the assembly.
    std::vector<double> encode_sequence(const PromptAssembly& seq) const;

    // Pools over all rows of the prompt matrix.
    std::vector<double> encode_prompt(const Matrix& prompt) const;

    // A sample feature vector is a 1-row matrix.
    std::vector<double> encode_image(std::span<const double> q) const;

    // Lipschitz constant of the map (matrix with `pooled_rows` rows, Frobenius
    // norm) -> (feature, 2-norm): spectral_norm(W) / sqrt(rows). Tight when
    // the perturbation repeats one row; independent random perturbations sit
    // well below it, near spectral_norm(W) / rows.
    double lipschitz_bound(int pooled_rows) const;

    // W^T (g (.) (1 - t^2)): pulls an output cotangent g back through tanh and
    // the linear map to the pooled input. Each pooled row then receives a 1/T
    // share of the result.
    std::vector<double> backprop_pooled(const std::vector<double>& feature,
                                        const std::vector<double>& cotangent) const;

private:
    int dim_;
    Matrix weight_;
    std::vector<double> bias_;
    double weight_spectral_;
};

struct ClassifierConfig {
    double mu = 1.0; // softmax temperature
    int num_classes = 0;
};

// Softmax over cosine-similarity / mu. Throws on zero-norm features.
std::vector<double> class_probabilities(const std::vector<std::vector<double>>& text_features,
                                        const std::vector<double>& image_feature, double mu);

// -log(probs[label]); probabilities below 1e-12 are clamped (counted).
double cross_entropy(const std::vector<double>& probs, int label);

std::uint64_t ce_clamp_count();

double cosine_similarity(std::span<const double> a, std::span<const double> b);

} // namespace promptfed
