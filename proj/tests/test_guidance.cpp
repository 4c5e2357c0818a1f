#include <cmath>
#include <doctest.h>
#include <stdexcept>

#include "vsf/guidance.hpp"

using namespace vsf;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

AttnInputs random_inputs(Rng& rng, std::size_t n_q, std::size_t n_p, std::size_t n_n,
                         std::size_t d) {
    AttnInputs in;
    in.q = random_matrix(rng, n_q, d);
    in.k_pos = random_matrix(rng, n_p, d);
    in.v_pos = random_matrix(rng, n_p, d);
    in.k_neg = random_matrix(rng, n_n, d);
    in.v_neg = random_matrix(rng, n_n, d);
    in.head_dim = d;
    return in;
}

// Independent split-form oracle: joint softmax computed by direct
// exp-normalize, split at column n_p, then A+ V+ - alpha A- V-.
Matrix vsf_split_oracle(const AttnInputs& in, double alpha) {
    const std::size_t n_q = in.q.rows();
    const std::size_t n_p = in.k_pos.rows();
    const std::size_t n_n = in.k_neg.rows();
    const std::size_t d = in.head_dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix out(n_q, d, 0.0);
    for (std::size_t i = 0; i < n_q; ++i) {
        std::vector<double> logits(n_p + n_n, 0.0);
        for (std::size_t j = 0; j < n_p + n_n; ++j) {
            const Matrix& k = j < n_p ? in.k_pos : in.k_neg;
            const std::size_t r = j < n_p ? j : j - n_p;
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += in.q(i, c) * k(r, c);
            logits[j] = dot * inv_sqrt_d;
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double denom = 0.0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            denom += l;
        }
        for (std::size_t j = 0; j < n_p + n_n; ++j) {
            const double w = logits[j] / denom;
            if (j < n_p) {
                for (std::size_t c = 0; c < d; ++c) out(i, c) += w * in.v_pos(j, c);
            } else {
                for (std::size_t c = 0; c < d; ++c) out(i, c) -= alpha * w * in.v_neg(j - n_p, c);
            }
        }
    }
    return out;
}

} // namespace

TEST_CASE("sdpa matches a hand softmax oracle") {
    const Matrix q = Matrix::from_rows({{1, 0}});
    const Matrix k = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix v = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix out = sdpa(q, k, v);

    const double l0 = 1.0 / std::sqrt(2.0);
    const double e0 = std::exp(l0), e1 = std::exp(0.0);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    CHECK(std::abs(out(0, 0) - w0) < 1e-12);
    CHECK(std::abs(out(0, 1) - w1) < 1e-12);
}

TEST_CASE("sdpa with a single key returns that value row") {
    Rng rng(1);
    const Matrix q = random_matrix(rng, 3, 4);
    const Matrix k = random_matrix(rng, 1, 4);
    const Matrix v = random_matrix(rng, 1, 4);
    const Matrix out = sdpa(q, k, v);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(out(i, j) == v(0, j));
    }
}

TEST_CASE("sdpa plan masking all but one column selects that value row") {
    Rng rng(2);
    const Matrix q = random_matrix(rng, 2, 4);
    const Matrix k = random_matrix(rng, 5, 4);
    const Matrix v = random_matrix(rng, 5, 4);
    AttnPlan plan(Mask(2, 5, false), Matrix(2, 5, 0.0));
    plan.allow.set(0, 3, true);
    plan.allow.set(1, 1, true);
    const Matrix out = sdpa(q, k, v, &plan);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(out(0, j) == v(3, j));
        CHECK(out(1, j) == v(1, j));
    }
}

TEST_CASE("sdpa shape errors") {
    CHECK_THROWS_AS(sdpa(Matrix(2, 3), Matrix(4, 5), Matrix(4, 5)), std::invalid_argument);
    CHECK_THROWS_AS(sdpa(Matrix(2, 3), Matrix(4, 3), Matrix(5, 3)), std::invalid_argument);
    AttnPlan plan(Mask(3, 4, true), Matrix(3, 4, 0.0));
    CHECK_THROWS_AS(sdpa(Matrix(2, 3), Matrix(4, 3), Matrix(4, 3), &plan),
                    std::invalid_argument);
}

TEST_CASE("vsf with zero negative values equals sdpa over concatenated keys") {
    Rng rng(3);
    AttnInputs in = random_inputs(rng, 4, 3, 2, 5);
    in.v_neg = Matrix(2, 5, 0.0);
    const Matrix got = vsf_cross_attention(in, 1.7);
    const Matrix expected =
        sdpa(in.q, concat_rows(in.k_pos, in.k_neg), concat_rows(in.v_pos, Matrix(2, 5, 0.0)));
    CHECK(max_abs_diff(got, expected) < 1e-15);
}

TEST_CASE("vsf split-form equivalence on random inputs") {
    Rng rng(4);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n_q = 1 + rng.next_below(6);
        const std::size_t n_p = 1 + rng.next_below(6);
        const std::size_t n_n = 1 + rng.next_below(6);
        const std::size_t d = 1 + rng.next_below(8);
        const double alpha = rng.uniform(0.0, 3.0);
        const AttnInputs in = random_inputs(rng, n_q, n_p, n_n, d);
        const Matrix got = vsf_cross_attention(in, alpha);
        const Matrix want = vsf_split_oracle(in, alpha);
        for (std::size_t i = 0; i < got.size(); ++i) {
            const double scale = std::max(1.0, std::abs(want.data()[i]));
            CHECK(std::abs(got.data()[i] - want.data()[i]) / scale < 1e-10);
        }
    }
}

TEST_CASE("vsf joint weights are alpha-independent; value path is linear in v_neg") {
    Rng rng(5);
    const AttnInputs in = random_inputs(rng, 3, 4, 2, 6);
    const Matrix base = vsf_cross_attention(in, 0.0);
    const Matrix a1 = vsf_cross_attention(in, 1.0);
    const Matrix a2 = vsf_cross_attention(in, 2.0);
    // alpha only scales the negative value contribution: out(2) - out(0) ==
    // 2 (out(1) - out(0)).
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double lhs = a2.data()[i] - base.data()[i];
        const double rhs = 2.0 * (a1.data()[i] - base.data()[i]);
        CHECK(std::abs(lhs - rhs) < 1e-9);
    }

    AttnInputs doubled = in;
    doubled.v_neg = scale(in.v_neg, 2.0);
    const Matrix d1 = vsf_cross_attention(doubled, 1.0);
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double lhs = d1.data()[i] - base.data()[i];
        const double rhs = 2.0 * (a1.data()[i] - base.data()[i]);
        CHECK(std::abs(lhs - rhs) < 1e-9);
    }
}

TEST_CASE("vsf with masked negative keys reduces to positive-only sdpa") {
    Rng rng(6);
    const AttnInputs in = random_inputs(rng, 3, 4, 2, 5);
    const Matrix k = concat_rows(in.k_pos, in.k_neg);
    const Matrix v = concat_rows(in.v_pos, scale(in.v_neg, -1.0));
    AttnPlan plan(Mask(3, 6, true), Matrix(3, 6, 0.0));
    for (std::size_t i = 0; i < 3; ++i) {
        plan.allow.set(i, 4, false);
        plan.allow.set(i, 5, false);
    }
    const Matrix masked = sdpa(in.q, k, v, &plan);
    const Matrix pos_only = sdpa(in.q, in.k_pos, in.v_pos);
    CHECK(max_abs_diff(masked, pos_only) < 1e-12);
}

TEST_CASE("vsf requires at least one negative token") {
    Rng rng(7);
    const AttnInputs in = random_inputs(rng, 2, 3, 0, 4);
    CHECK_THROWS_WITH_AS(vsf_cross_attention(in, 1.0), doctest::Contains("sdpa"),
                         std::invalid_argument);
}

TEST_CASE("nasa_combine examples") {
    Rng rng(8);
    const Matrix zp = random_matrix(rng, 3, 4);
    const Matrix zn = random_matrix(rng, 3, 4);
    CHECK(bitwise_equal(nasa_combine(zp, zn, 0.0), zp));

    const Matrix r = nasa_combine(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{0.5, 0.5}}),
                                  0.5);
    CHECK(r(0, 0) == 0.75);
    CHECK(r(0, 1) == 1.75);

    const Matrix zero = nasa_combine(zp, zp, 1.0);
    CHECK(max_abs_diff(zero, Matrix(3, 4, 0.0)) == 0.0);

    CHECK_THROWS_AS(nasa_combine(Matrix(2, 2), Matrix(3, 2), 0.5), std::invalid_argument);
}

TEST_CASE("nag_combine examples and degenerate rules") {
    Rng rng(9);
    const Matrix zp = random_matrix(rng, 4, 5);
    const Matrix zn = random_matrix(rng, 4, 5);

    // phi = 0: no extrapolation, no rescale, any blend returns Z+.
    CHECK(max_abs_diff(nag_combine(zp, zn, 0.0, 1.5, 0.7), zp) < 1e-12);
    // blend = 0 is the identity bitwise.
    CHECK(bitwise_equal(nag_combine(zp, zn, 3.0, 1.5, 0.0), zp));

    const Matrix capped = nag_combine(Matrix::from_rows({{3, 4}}), Matrix::from_rows({{0, 0}}),
                                      1.0, 1.2, 1.0);
    CHECK(std::abs(capped(0, 0) - 3.6) < 1e-12);
    CHECK(std::abs(capped(0, 1) - 4.8) < 1e-12);

    // Zero-norm positive row passes the extrapolated row through unrescaled.
    const Matrix zp0 = Matrix::from_rows({{0, 0}});
    const Matrix zn0 = Matrix::from_rows({{1, 1}});
    const Matrix passed = nag_combine(zp0, zn0, 2.0, 1.1, 1.0);
    CHECK(std::abs(passed(0, 0) - (-2.0)) < 1e-12);
    CHECK(std::abs(passed(0, 1) - (-2.0)) < 1e-12);

    CHECK_THROWS_AS(nag_combine(Matrix(2, 2), Matrix(2, 3), 1.0, 2.0, 0.5),
                    std::invalid_argument);
}

TEST_CASE("nag_combine norm cap property at blend one") {
    Rng rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t rows = 1 + rng.next_below(4);
        const std::size_t cols = 1 + rng.next_below(6);
        const Matrix zp = random_matrix(rng, rows, cols, -2.0, 2.0);
        const Matrix zn = random_matrix(rng, rows, cols, -2.0, 2.0);
        const double phi = rng.uniform(0.0, 16.0);
        const double tau = rng.uniform(1.0, 10.0);
        const Matrix out = nag_combine(zp, zn, phi, tau, 1.0);
        const auto out_norms = l2_norm_rows(out);
        const auto pos_norms = l2_norm_rows(zp);
        for (std::size_t i = 0; i < rows; ++i) {
            if (pos_norms[i] == 0.0) continue;
            CHECK(out_norms[i] <= tau * pos_norms[i] + 1e-9);
        }
    }
}

TEST_CASE("cfg_combine identities and paper scale example") {
    Rng rng(11);
    const Matrix un = random_matrix(rng, 3, 4);
    const Matrix up = random_matrix(rng, 3, 4);
    CHECK(bitwise_equal(cfg_combine(un, up, 1.0), up));
    CHECK(bitwise_equal(cfg_combine(un, up, 0.0), un));

    const Matrix r = cfg_combine(Matrix::from_rows({{0}}), Matrix::from_rows({{1}}), 2.8);
    CHECK(r(0, 0) == 2.8);

    CHECK_THROWS_AS(cfg_combine(Matrix(2, 2), Matrix(3, 2), 1.5), std::invalid_argument);
}

TEST_CASE("wef_transform stacking, scaling and inverse recovery") {
    Rng rng(12);
    const Matrix pos = random_matrix(rng, 2, 4);
    const Matrix neg = random_matrix(rng, 3, 4);

    const Matrix zeroed = wef_transform(pos, neg, 0.0);
    CHECK(zeroed.rows() == 5);
    for (std::size_t i = 2; i < 5; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(zeroed(i, j) == 0.0);
    }

    const double alpha = 1.3;
    const Matrix out = wef_transform(pos, neg, alpha);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 4);
    CHECK(max_abs_diff(slice_rows(out, 0, 2), pos) == 0.0);
    const Matrix recovered = scale(slice_rows(out, 2, 5), -1.0 / alpha);
    CHECK(max_abs_diff(recovered, neg) < 1e-12);

    CHECK_THROWS_AS(wef_transform(Matrix(2, 3), Matrix(2, 4), 1.0), std::invalid_argument);
}

TEST_CASE("guidance spec validation") {
    GuidanceSpec ok;
    ok.validate();

    GuidanceSpec bad_blend;
    bad_blend.blend = 1.5;
    CHECK_THROWS_AS(bad_blend.validate(), std::invalid_argument);

    GuidanceSpec bad_tau;
    bad_tau.tau = 0.5;
    CHECK_THROWS_AS(bad_tau.validate(), std::invalid_argument);

    GuidanceSpec nan_lambda;
    nan_lambda.lambda = std::nan("");
    CHECK_THROWS_AS(nan_lambda.validate(), std::invalid_argument);
}
