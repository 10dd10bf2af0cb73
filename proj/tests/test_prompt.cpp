#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "promptfed/prompt.hpp"
#include "promptfed/rng.hpp"

using namespace promptfed;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, "test-prompt", rows, cols);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.next_gaussian();
    return m;
}

} // namespace

TEST_CASE("max_sequence_length layout arithmetic") {
    CHECK(max_sequence_length(8, 64) == 140);
    CHECK(max_sequence_length(8, 4) == 20);
    CHECK(max_sequence_length(8, 0) == 12); // degenerate boundary
}

TEST_CASE("assemble layout and padding") {
    const int m = 6;
    TokenTable table(m, 4, 11);
    Matrix global = random_matrix(2, m, 1);
    Matrix local = random_matrix(1, m, 2);
    Matrix refined = random_matrix(1, m, 3);
    PromptAssembly a = assemble(global, local, refined, 0, table, 10);
    CHECK(a.true_length == 8);
    for (int r = 8; r < 10; ++r)
        for (int j = 0; j < m; ++j) CHECK(a.sequence(r, j) == 0.0);
}

TEST_CASE("assemble with zero prompts keeps special rows nonzero") {
    const int m = 5;
    TokenTable table(m, 3, 21);
    Matrix z2(2, m), z1(1, m);
    PromptAssembly a = assemble(z2, z1, z1, 1, table, 12);
    // Prompt rows 1..4 are zero.
    for (int r = 1; r <= 4; ++r)
        for (int j = 0; j < m; ++j) CHECK(a.sequence(r, j) == 0.0);
    // Special rows (start, label, suffix, end) are not.
    for (int r : {0, 5, 6, 7}) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += a.sequence(r, j) * a.sequence(r, j);
        CHECK(s > 0.0);
    }
}

TEST_CASE("assemble succeeds for all paper-range local lengths") {
    const int m = 512;
    const int global_len = 8;
    TokenTable table(m, 2, 7);
    Matrix global = random_matrix(global_len, m, 4);
    const int k_max = max_sequence_length(global_len, 64);
    for (int sl = 4; sl <= 64; ++sl) {
        Matrix local = random_matrix(sl, m, 100 + sl);
        PromptAssembly a = assemble(global, local, local, 0, table, k_max);
        CHECK(a.true_length == 4 + global_len + 2 * sl);
    }
}

TEST_CASE("assemble rejects overflow with a diagnostic") {
    const int m = 4;
    TokenTable table(m, 2, 5);
    Matrix global = random_matrix(2, m, 1);
    Matrix local = random_matrix(3, m, 2);
    CHECK_THROWS_WITH_AS(assemble(global, local, local, 0, table, 10),
                         doctest::Contains("exceeds K_max"), std::invalid_argument);
}

TEST_CASE("assemble round-trip slicing recovers each block") {
    const int m = 7;
    TokenTable table(m, 3, 31);
    Matrix global = random_matrix(3, m, 10);
    Matrix local = random_matrix(2, m, 11);
    Matrix refined = random_matrix(2, m, 12);
    PromptAssembly a = assemble(global, local, refined, 2, table, 20);
    // Layout: start | global | local | refined | label | suffix | end.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < m; ++j) CHECK(a.sequence(1 + i, j) == global(i, j));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < m; ++j) CHECK(a.sequence(4 + i, j) == local(i, j));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < m; ++j) CHECK(a.sequence(6 + i, j) == refined(i, j));
    for (int j = 0; j < m; ++j) {
        CHECK(a.sequence(0, j) == table.start()[j]);
        CHECK(a.sequence(8, j) == table.label(2)[j]);
        CHECK(a.sequence(9, j) == table.suffix()[j]);
        CHECK(a.sequence(10, j) == table.end()[j]);
    }
}

TEST_CASE("assemble is injective in its inputs") {
    const int m = 5;
    TokenTable table(m, 3, 41);
    Matrix global = random_matrix(2, m, 20);
    Matrix local = random_matrix(2, m, 21);
    Matrix refined = random_matrix(2, m, 22);
    PromptAssembly base = assemble(global, local, refined, 0, table, 14);

    auto differs = [&](const PromptAssembly& other) {
        for (int r = 0; r < 14; ++r)
            for (int j = 0; j < m; ++j)
                if (base.sequence(r, j) != other.sequence(r, j)) return true;
        return false;
    };

    Matrix g2 = global;
    g2(0, 0) += 1e-9;
    CHECK(differs(assemble(g2, local, refined, 0, table, 14)));
    Matrix l2 = local;
    l2(1, 2) += 1e-9;
    CHECK(differs(assemble(global, l2, refined, 0, table, 14)));
    Matrix r2 = refined;
    r2(0, 4) += 1e-9;
    CHECK(differs(assemble(global, local, r2, 0, table, 14)));
    CHECK(differs(assemble(global, local, refined, 1, table, 14)));
}

TEST_CASE("token table is deterministic in its seed") {
    TokenTable a(8, 4, 99), b(8, 4, 99), c(8, 4, 100);
    CHECK(a.start() == b.start());
    CHECK(a.label(3) == b.label(3));
    CHECK(a.end() == b.end());
    CHECK(a.start() != c.start());
}
