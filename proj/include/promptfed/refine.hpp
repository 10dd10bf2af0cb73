#pragma once

#include "promptfed/matrix.hpp"

namespace promptfed {

// Orthogonal projector onto the span of the global prompt's smallest
// right-singular directions, plus its truncation metadata.
struct SubspaceProjector {
    Matrix projection;  // R = X2 X2^T, m x m
    double lambda = 0.0;
    int removed = 0;    // r = floor(lambda * m), dominant directions dropped
    int retained = 0;   // m' = m - r
    int source_round = 0;
    int source_step = 0;
};

// Full SVD of the global prompt, X2 = right-singular columns r+1..m (null
// directions included), R = X2 X2^T. The index-based selection takes
// precedence when lambda*m is non-integral, so retained = m - floor(lambda*m).
SubspaceProjector build_projector(const Matrix& global_prompt, double lambda,
                                  int round = 0, int step = 0);

// G~ = G * R, same shape as the input.
Matrix refine(const Matrix& local_prompt, const SubspaceProjector& proj);

} // namespace promptfed
