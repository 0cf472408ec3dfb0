#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tabret {

// Dense row-major matrix of doubles. All tensors in the model are carried
// as matrices; token stacks are flattened to (batch*tokens) x dim.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::vector<double> v) : rows(r), cols(c), data(std::move(v)) {
        assert(static_cast<size_t>(r) * c == data.size());
    }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, double v) {
        Matrix m(r, c);
        std::fill(m.data.begin(), m.data.end(), v);
        return m;
    }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }

    bool all_finite() const;
};

// Basic kernels (Eigen-backed in the implementation).
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
void add_inplace(Matrix& a, const Matrix& b);
void axpy_inplace(Matrix& a, double s, const Matrix& b);  // a += s*b

// Deterministic splittable generator. The stream depends only on the seed
// and the split path, not on the platform or the standard library.
class RngState {
public:
    explicit RngState(uint64_t seed) : state_(mix_(seed)) {}

    // Derives an independent stream named by `name`; the parent is unchanged.
    RngState split(std::string_view name) const;

    uint64_t next_u64();
    double uniform();  // [0, 1)
    double normal();   // standard normal, Box-Muller
    int uniform_int(int n);  // [0, n)

    // k distinct indices from [0, n), uniform without replacement, sorted.
    std::vector<int> choose(int k, int n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    static uint64_t mix_(uint64_t z);
    uint64_t state_;
};

}  // namespace tabret
