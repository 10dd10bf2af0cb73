#pragma once

#include "promptfed/encoder.hpp"
#include "promptfed/matrix.hpp"
#include "promptfed/prompt.hpp"
#include "promptfed/refine.hpp"

#include <vector>

namespace promptfed {

struct LabeledExample {
    std::vector<double> image;
    int label = 0;
};

using Batch = std::vector<LabeledExample>;

struct ObjectiveConfig {
    double mu = 1.0;
    double gamma = 0.8;
    // When false, the stretch term also backpropagates through the projection
    // that produced the refined prompt. Default keeps the refined prompt fixed.
    bool detach_refined = true;
};

struct LossBreakdown {
    double ce_local = 0.0;
    double ce_global = 0.0;
    double str = 0.0;
    double sep = 0.0;
    double total = 0.0;
};

struct GradientPair {
    Matrix d_global;  // S_s x m
    Matrix d_local;   // S_l x m
};

// Class posterior for one image under a specific assembly. Callers control
// which blocks are live by passing zero matrices for the others.
std::vector<double> assembly_probabilities(const Matrix& global, const Matrix& local,
                                           const Matrix& refined,
                                           const std::vector<double>& image,
                                           const TokenTable& table, const FrozenEncoder& enc,
                                           double mu);

// Squared 2-norm of the pooled-feature gap between a local prompt and its
// refined counterpart.
double stretch_loss(const Matrix& g_c, const Matrix& g_c_refined, const FrozenEncoder& enc);

// Hinge on the pooled-feature distance between local and global prompts.
double separate_loss(const Matrix& g_c, const Matrix& g_s, double gamma,
                     const FrozenEncoder& enc);

// Sum of the four terms. The ce terms are batch means: ce_local scores with
// the local and refined blocks live, ce_global with only the global block.
LossBreakdown total_loss(const Matrix& g_s, const Matrix& g_c, const Matrix& refined,
                         const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                         const ObjectiveConfig& cfg);
LossBreakdown total_loss(const Matrix& g_s, const Matrix& g_c, const SubspaceProjector& proj,
                         const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                         const ObjectiveConfig& cfg);

// Per-row gradient of stretch_loss in the local prompt, refined held fixed.
// Every local row receives the same vector.
std::vector<double> stretch_gradient_row(const Matrix& g_c, const Matrix& g_c_refined,
                                         const FrozenEncoder& enc);

// Per-row subgradient of separate_loss in the local prompt; zero outside the
// margin, at the boundary, and at coincident features.
std::vector<double> separate_gradient_row(const Matrix& g_c, const Matrix& g_s, double gamma,
                                          const FrozenEncoder& enc);

// Analytic gradients with the refined prompt held fixed. Gradient flow:
// ce_global feeds only d_global; ce_local, stretch and the hinge feed only
// d_local; the global-prompt features inside the hinge are constants; the
// hinge boundary uses subgradient zero.
GradientPair gradients_fixed_refined(const Matrix& g_s, const Matrix& g_c,
                                     const Matrix& refined, const Batch& batch,
                                     const TokenTable& table, const FrozenEncoder& enc,
                                     const ObjectiveConfig& cfg);

// Refines from the projector first. With detach_refined = false the stretch
// term picks up the extra path through the projection.
GradientPair gradients(const Matrix& g_s, const Matrix& g_c, const SubspaceProjector& proj,
                       const Batch& batch, const TokenTable& table, const FrozenEncoder& enc,
                       const ObjectiveConfig& cfg);

} // namespace promptfed
