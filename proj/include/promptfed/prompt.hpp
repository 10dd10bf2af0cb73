#pragma once

#include "promptfed/matrix.hpp"

#include <cstdint>
#include <vector>

namespace promptfed {

// Frozen special-token embeddings. The pad token is exactly zero; all other
// tokens are deterministic functions of (seed, role, class_id).
class TokenTable {
public:
    // token_scale widens the frozen label embeddings so the class signal stays
    // visible after mean pooling over a long sequence.
    TokenTable(int embedding_dim, int num_classes, std::uint64_t seed,
               double token_scale = 1.0);

    int dim() const { return dim_; }
    int num_classes() const { return num_classes_; }
    std::uint64_t seed() const { return seed_; }

    const std::vector<double>& start() const { return start_; }
    const std::vector<double>& label(int class_id) const;
    const std::vector<double>& suffix() const { return suffix_; }
    const std::vector<double>& end() const { return end_; }

private:
    int dim_;
    int num_classes_;
    std::uint64_t seed_;
    std::vector<double> start_, suffix_, end_;
    std::vector<std::vector<double>> labels_;
};

// Token sequence layout, fixed order:
//   [start | global (S_s) | local (S_l) | refined local (S_l) | label | suffix | end | zero padding]
struct PromptAssembly {
    Matrix sequence;  // K_max x m, rows past true_length are zero
    int true_length = 0;
    int class_id = 0;
};

constexpr int kSpecialTokenCount = 4; // start, label, suffix, end

// Smallest K_max admitting the longest client layout.
int max_sequence_length(int global_len, int local_len_max);

PromptAssembly assemble(const Matrix& global, const Matrix& local, const Matrix& refined,
                        int class_id, const TokenTable& table, int k_max);

} // namespace promptfed
