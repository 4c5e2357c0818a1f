#include <cmath>
#include <doctest.h>
#include <stdexcept>

#include "vsf/matrix.hpp"

using namespace vsf;

namespace {

// Independent triple-loop product used as the matmul oracle.
Matrix matmul_ref(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

} // namespace

TEST_CASE("matmul identity and hand products") {
    const Matrix id = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix b = Matrix::from_rows({{2, 3}, {4, 5}});
    const Matrix prod = matmul(id, b);
    CHECK(max_abs_diff(prod, b) == 0.0);

    const Matrix r = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
    CHECK(r.rows() == 1);
    CHECK(r.cols() == 1);
    CHECK(r(0, 0) == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    const Matrix a = random_matrix(rng, 5, 7);
    const Matrix b = random_matrix(rng, 7, 3);
    CHECK(max_abs_diff(matmul(a, b), matmul_ref(a, b)) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
    const Matrix a(2, 3), b(4, 5);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), std::invalid_argument);
    try {
        matmul(a, b);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("4x5") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random triples") {
    Rng rng(22);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix a = random_matrix(rng, 4, 6);
        const Matrix b = random_matrix(rng, 6, 5);
        const Matrix c = random_matrix(rng, 5, 3);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            const double scale = std::max({1.0, std::abs(left.data()[i]), std::abs(right.data()[i])});
            CHECK(std::abs(left.data()[i] - right.data()[i]) / scale < 1e-9);
        }
    }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
    Rng rng(33);
    const Matrix a = random_matrix(rng, 4, 6);
    const Matrix b = random_matrix(rng, 5, 6);
    CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-12);
    const Matrix c = random_matrix(rng, 4, 5);
    CHECK(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-12);
}

TEST_CASE("row_softmax symmetry and single allowed column") {
    const Matrix sym = row_softmax(Matrix::from_rows({{0, 0}}));
    CHECK(sym(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sym(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    Mask allow(1, 2, true);
    allow.set(0, 1, false);
    const Matrix one = row_softmax(Matrix::from_rows({{1, 1}}), allow, Matrix(1, 2, 0.0));
    CHECK(one(0, 0) == 1.0);
    CHECK(one(0, 1) == 0.0);
}

TEST_CASE("row_softmax bias matches exp-normalize oracle") {
    const Matrix logits = Matrix::from_rows({{1, 2, 3}});
    const Matrix bias = Matrix::from_rows({{0, 0, -30}});
    const Matrix got = row_softmax(logits, Mask(1, 3, true), bias);

    // Direct exp-normalize of [1, 2, -27].
    const double e[3] = {std::exp(1.0), std::exp(2.0), std::exp(-27.0)};
    const double denom = e[0] + e[1] + e[2];
    for (int j = 0; j < 3; ++j) {
        CHECK(std::abs(got(0, static_cast<std::size_t>(j)) - e[j] / denom) < 1e-12);
    }
}

TEST_CASE("row_softmax fully masked row reports the row index") {
    Mask allow(3, 2, true);
    allow.set(1, 0, false);
    allow.set(1, 1, false);
    CHECK_THROWS_WITH_AS(row_softmax(Matrix(3, 2, 0.0), allow, Matrix(3, 2, 0.0)),
                         doctest::Contains("row 1"), std::runtime_error);
}

TEST_CASE("row_softmax rows sum to one over allowed columns") {
    Rng rng(44);
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix logits = random_matrix(rng, 6, 9, -5.0, 5.0);
        Mask allow(6, 9, true);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 1; j < 9; ++j) allow.set(i, j, rng.uniform() < 0.7);
        }
        const Matrix bias = random_matrix(rng, 6, 9, -1.0, 1.0);
        const Matrix p = row_softmax(logits, allow, bias);
        for (std::size_t i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 9; ++j) {
                if (!allow.at(i, j)) CHECK(p(i, j) == 0.0);
                sum += p(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("row_softmax is monotone in a raised logit") {
    Rng rng(55);
    Matrix logits = random_matrix(rng, 1, 5);
    const Matrix before = row_softmax(logits);
    logits(0, 2) += 0.5;
    const Matrix after = row_softmax(logits);
    CHECK(after(0, 2) > before(0, 2));
}

TEST_CASE("concatenation examples and slice round-trip") {
    CHECK(max_abs_diff(concat_cols(Matrix::from_rows({{1}}), Matrix::from_rows({{2}})),
                       Matrix::from_rows({{1, 2}})) == 0.0);
    CHECK(max_abs_diff(concat_rows(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, 4}})),
                       Matrix::from_rows({{1, 2}, {3, 4}})) == 0.0);

    Rng rng(66);
    const Matrix a = random_matrix(rng, 3, 4);
    const Matrix b = random_matrix(rng, 5, 4);
    const Matrix cat = concat_rows(a, b);
    CHECK(max_abs_diff(slice_rows(cat, 0, 3), a) == 0.0);
    CHECK(max_abs_diff(slice_rows(cat, 3, 8), b) == 0.0);

    const Matrix c = random_matrix(rng, 3, 6);
    const Matrix cat2 = concat_cols(a, c);
    CHECK(max_abs_diff(slice_cols(cat2, 0, 4), a) == 0.0);
    CHECK(max_abs_diff(slice_cols(cat2, 4, 10), c) == 0.0);

    CHECK_THROWS_AS(concat_rows(Matrix(2, 3), Matrix(2, 4)), std::invalid_argument);
    CHECK_THROWS_AS(concat_cols(Matrix(2, 3), Matrix(3, 3)), std::invalid_argument);
}

TEST_CASE("l2_norm_rows examples and oracle") {
    const auto n1 = l2_norm_rows(Matrix::from_rows({{3, 4}}));
    CHECK(n1.size() == 1);
    CHECK(n1[0] == 5.0);
    CHECK(l2_norm_rows(Matrix::from_rows({{0, 0}}))[0] == 0.0);

    Rng rng(77);
    const Matrix m = random_matrix(rng, 1, 13);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(0, j) * m(0, j);
    CHECK(std::abs(l2_norm_rows(m)[0] - std::sqrt(acc)) < 1e-12);
}

TEST_CASE("finite check rejects non-finite results") {
    const Matrix inf_m = Matrix::from_rows({{1e308}});
    CHECK_THROWS_AS(add(inf_m, inf_m), std::runtime_error);
}

TEST_CASE("rng determinism over ten thousand draws") {
    Rng a(123456789);
    Rng b(123456789);
    for (int i = 0; i < 10000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(1), d(2);
    bool all_equal = true;
    for (int i = 0; i < 16; ++i) {
        if (c.next_u64() != d.next_u64()) all_equal = false;
    }
    CHECK_FALSE(all_equal);
}

TEST_CASE("rng frozen reference draws") {
    // These pin the generator definition (seed + k*gamma through the
    // SplitMix64 finalizer); any change to the algorithm must fail here.
    Rng r(42);
    const std::uint64_t expected0 = [] {
        std::uint64_t z = 42ULL + 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }();
    CHECK(r.next_u64() == expected0);

    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    Rng nb(9);
    for (int i = 0; i < 1000; ++i) {
        CHECK(nb.next_below(17) < 17);
    }
}
