#include "promptfed/refine.hpp"

#include <cmath>
#include <stdexcept>

namespace promptfed {

SubspaceProjector build_projector(const Matrix& global_prompt, double lambda,
                                  int round, int step) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw std::invalid_argument("build_projector: lambda must lie in (0, 1)");
    const int m = global_prompt.cols();
    if (m < 2) throw std::invalid_argument("build_projector: embedding dim must be >= 2");
    global_prompt.require_finite("build_projector");

    const int removed = static_cast<int>(std::floor(lambda * static_cast<double>(m)));
    const int retained = m - removed;

    SubspaceProjector out;
    out.lambda = lambda;
    out.removed = removed;
    out.retained = retained;
    out.source_round = round;
    out.source_step = step;

    if (removed == 0) {
        out.projection = Matrix::identity(m);
        return out;
    }

    const SvdResult decomp = svd(global_prompt);
    // R = X2 X2^T over right-singular columns removed..m-1 (exploit symmetry).
    Matrix r(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) {
            double s = 0.0;
            for (int k = removed; k < m; ++k) s += decomp.right(i, k) * decomp.right(j, k);
            r(i, j) = s;
            r(j, i) = s;
        }
    }
    out.projection = std::move(r);
    return out;
}

Matrix refine(const Matrix& local_prompt, const SubspaceProjector& proj) {
    if (local_prompt.cols() != proj.projection.rows())
        throw std::invalid_argument("refine: prompt column count does not match projector dim");
    return matmul(local_prompt, proj.projection);
}

} // namespace promptfed
