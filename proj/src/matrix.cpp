#include "vsf/matrix.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vsf {

Matrix::Matrix(std::size_t rows, std::size_t cols, double value)
    : rows_(rows), cols_(cols), data_(rows * cols, value) {}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
        if (r.size() != m.cols_) {
            throw std::invalid_argument("Matrix::from_rows: ragged rows");
        }
        m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Matrix::ensure_finite(const char* op) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw std::runtime_error(std::string(op) + ": non-finite entry at (" +
                                     std::to_string(i / cols_) + "," + std::to_string(i % cols_) +
                                     ")");
        }
    }
}

Mask::Mask(std::size_t rows, std::size_t cols, bool value)
    : rows_(rows), cols_(cols), data_(rows * cols, value ? 1 : 0) {}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " * " +
                                    b.shape_str());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    out.ensure_finite("matmul");
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: shape mismatch " + a.shape_str() + " * " +
                                    b.shape_str() + "^T");
    }
    Matrix out(a.rows(), b.rows());
    const std::size_t k = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            orow[j] = acc;
        }
    }
    out.ensure_finite("matmul_nt");
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn: shape mismatch " + a.shape_str() + "^T * " +
                                    b.shape_str());
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p) {
        const double* arow = a.row(p);
        const double* brow = b.row(p);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = arow[i];
            double* orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    out.ensure_finite("matmul_tn");
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] + b.data()[i];
    }
    out.ensure_finite("add");
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("sub: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] - b.data()[i];
    }
    out.ensure_finite("sub");
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.data()[i] = m.data()[i] * s;
    }
    out.ensure_finite("scale");
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add_inplace: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data()[i] += b.data()[i];
    }
    a.ensure_finite("add_inplace");
}

void add_row_inplace(Matrix& a, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw std::invalid_argument("add_row_inplace: expected 1x" + std::to_string(a.cols()) +
                                    ", got " + row.shape_str());
    }
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* arow = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            arow[j] += row.data()[j];
        }
    }
    a.ensure_finite("add_row_inplace");
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("concat_rows: column mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Matrix out(a.rows() + b.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i];
    for (std::size_t i = 0; i < b.size(); ++i) out.data()[a.size() + i] = b.data()[i];
    return out;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("concat_cols: row mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.row(i);
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = arow[j];
        for (std::size_t j = 0; j < b.cols(); ++j) orow[a.cols() + j] = brow[j];
    }
    return out;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.rows()) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + m.shape_str());
    }
    Matrix out(end - begin, m.cols());
    for (std::size_t i = begin; i < end; ++i) {
        const double* src = m.row(i);
        double* dst = out.row(i - begin);
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = src[j];
    }
    return out;
}

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.cols()) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + m.shape_str());
    }
    Matrix out(m.rows(), end - begin);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* src = m.row(i);
        double* dst = out.row(i);
        for (std::size_t j = begin; j < end; ++j) dst[j - begin] = src[j];
    }
    return out;
}

std::vector<double> l2_norm_rows(const Matrix& m) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * row[j];
        out[i] = std::sqrt(acc);
    }
    return out;
}

Matrix row_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* lrow = logits.row(i);
        double* orow = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (lrow[j] > mx) mx = lrow[j];
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double e = std::exp(lrow[j] - mx);
            orow[j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) orow[j] /= denom;
    }
    out.ensure_finite("row_softmax");
    return out;
}

Matrix row_softmax(const Matrix& logits, const Mask& allow, const Matrix& bias) {
    if (!allow.same_shape(logits) || !logits.same_shape(bias)) {
        throw std::invalid_argument("row_softmax: logits " + logits.shape_str() + ", bias " +
                                    bias.shape_str() + " and allow mask must share shape");
    }
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* lrow = logits.row(i);
        const double* brow = bias.row(i);
        double* orow = out.row(i);
        // Row max over allowed entries only; disallowed entries stay exactly 0.
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (!allow.at(i, j)) continue;
            any = true;
            const double l = lrow[j] + brow[j];
            if (l > mx) mx = l;
        }
        if (!any) {
            throw std::runtime_error("row_softmax: fully masked row " + std::to_string(i));
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (allow.at(i, j)) {
                const double e = std::exp(lrow[j] + brow[j] - mx);
                orow[j] = e;
                denom += e;
            } else {
                orow[j] = 0.0;
            }
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (allow.at(i, j)) orow[j] /= denom;
        }
    }
    out.ensure_finite("row_softmax");
    return out;
}

namespace {

inline std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t Rng::next_u64() {
    ++counter_;
    return splitmix_finalize(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("Rng::next_below: n must be >= 1");
    }
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // Box-Muller; u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

Matrix random_normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
    return m;
}

} // namespace vsf
