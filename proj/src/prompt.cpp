#include "promptfed/prompt.hpp"
#include "promptfed/rng.hpp"

#include <stdexcept>
#include <string>

namespace promptfed {

namespace {

std::vector<double> frozen_token(std::uint64_t seed, int role, int class_id, int dim,
                                 double scale) {
    RngStream rng = RngStream::derive(seed, "token-table",
                                      static_cast<std::uint64_t>(role),
                                      static_cast<std::uint64_t>(class_id));
    std::vector<double> v(dim);
    for (double& x : v) x = scale * rng.next_gaussian();
    return v;
}

} // namespace

TokenTable::TokenTable(int embedding_dim, int num_classes, std::uint64_t seed,
                       double token_scale)
    : dim_(embedding_dim), num_classes_(num_classes), seed_(seed) {
    if (embedding_dim < 1 || num_classes < 1)
        throw std::invalid_argument("TokenTable: dim and num_classes must be positive");
    if (token_scale <= 0.0)
        throw std::invalid_argument("TokenTable: token_scale must be positive");
    start_ = frozen_token(seed, 0, 0, dim_, 1.0);
    suffix_ = frozen_token(seed, 2, 0, dim_, 1.0);
    end_ = frozen_token(seed, 3, 0, dim_, 1.0);
    labels_.reserve(num_classes_);
    for (int c = 0; c < num_classes_; ++c)
        labels_.push_back(frozen_token(seed, 1, c, dim_, token_scale));
}

const std::vector<double>& TokenTable::label(int class_id) const {
    if (class_id < 0 || class_id >= num_classes_)
        throw std::out_of_range("TokenTable::label: class id " + std::to_string(class_id) +
                                " outside [0, " + std::to_string(num_classes_) + ")");
    return labels_[class_id];
}

int max_sequence_length(int global_len, int local_len_max) {
    if (global_len < 1 || local_len_max < 0)
        throw std::invalid_argument("max_sequence_length: lengths must be positive");
    return global_len + 2 * local_len_max + kSpecialTokenCount;
}

PromptAssembly assemble(const Matrix& global, const Matrix& local, const Matrix& refined,
                        int class_id, const TokenTable& table, int k_max) {
    const int m = table.dim();
    if (global.cols() != m || local.cols() != m || refined.cols() != m)
        throw std::invalid_argument("assemble: prompt column count must equal embedding dim");
    if (local.rows() != refined.rows())
        throw std::invalid_argument("assemble: local and refined prompts must share shape");

    const int true_length = 1 + global.rows() + 2 * local.rows() + 3;
    if (true_length > k_max)
        throw std::invalid_argument("assemble: sequence length " + std::to_string(true_length) +
                                    " exceeds K_max " + std::to_string(k_max) +
                                    " (local prompt length " + std::to_string(local.rows()) + ")");

    PromptAssembly out;
    out.sequence = Matrix(k_max, m);
    out.true_length = true_length;
    out.class_id = class_id;

    int r = 0;
    auto put_vector = [&](const std::vector<double>& v) {
        for (int j = 0; j < m; ++j) out.sequence(r, j) = v[j];
        ++r;
    };
    auto put_block = [&](const Matrix& block) {
        for (int i = 0; i < block.rows(); ++i, ++r)
            for (int j = 0; j < m; ++j) out.sequence(r, j) = block(i, j);
    };

    put_vector(table.start());
    put_block(global);
    put_block(local);
    put_block(refined);
    put_vector(table.label(class_id));
    put_vector(table.suffix());
    put_vector(table.end());
    // Remaining rows stay zero (padding).
    return out;
}

} // namespace promptfed
