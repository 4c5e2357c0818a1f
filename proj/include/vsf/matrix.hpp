#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace vsf {

/// Dense row-major matrix of doubles. This is the numeric substrate for the
/// whole project: attention, guidance combinators and the toy model all sit
/// on top of it. Every public operation checks its output for NaN/Inf.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double value = 0.0);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

    /// Throws std::runtime_error if any entry is NaN or Inf. `op` names the
    /// operation that produced this matrix.
    void ensure_finite(const char* op) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Boolean matrix used for attention allow-masks.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t rows, std::size_t cols, bool value = true);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    bool at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }

    bool same_shape(const Mask& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows() && cols_ == o.cols(); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
void add_inplace(Matrix& a, const Matrix& b);
/// Adds a 1 x cols row vector to every row of a.
void add_row_inplace(Matrix& a, const Matrix& row);

Matrix concat_rows(const Matrix& a, const Matrix& b);
Matrix concat_cols(const Matrix& a, const Matrix& b);
/// Rows [begin, end) as a copy.
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);
/// Columns [begin, end) as a copy.
Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t end);

std::vector<double> l2_norm_rows(const Matrix& m);

/// Numerically stabilized softmax over each row (row-max subtraction).
Matrix row_softmax(const Matrix& logits);

/// Masked, biased row softmax. Effective logit is logit + bias where allowed
/// and -inf where disallowed; disallowed entries of the output are exactly 0.
/// A fully masked row is an error naming the row index.
Matrix row_softmax(const Matrix& logits, const Mask& allow, const Matrix& bias);

/// Counter-based deterministic random generator. The draw sequence is a pure
/// function of (seed, draw index):
///
///   u64(k) = finalize(seed + k * 0x9E3779B97F4A7C15)   k = 1, 2, ...
///
/// where finalize is the SplitMix64 output mix (xor-shift-multiply with
/// constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). uniform() maps the
/// top 53 bits to [0, 1); normal() is Box-Muller on two uniform draws. This
/// definition is frozen: regression tests pin concrete outputs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform integer in [0, n), n >= 1.
    std::uint64_t next_below(std::uint64_t n);
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Standard normal draw (consumes two u64 draws).
    double normal();

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0);
Matrix random_normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0);

} // namespace vsf
