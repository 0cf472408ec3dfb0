#include "tabret/matrix.hpp"

#include <Eigen/Core>
#include <cmath>

namespace tabret {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap cmap(const Matrix& m) { return CMap(m.data.data(), m.rows, m.cols); }
MMap mmap(Matrix& m) { return MMap(m.data.data(), m.rows, m.cols); }
}  // namespace

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.rows);
    // Each output row is accumulated through the same fixed-address buffers,
    // so its bits depend only on the row's values, never on its index: row
    // permutations of `a` permute the product bitwise. A blocked product does
    // not guarantee this (edge-panel kernels round differently).
    Matrix out(a.rows, b.cols);
    CMap bm = cmap(b);
    Eigen::RowVectorXd x(a.cols), acc(b.cols);
    for (int i = 0; i < a.rows; ++i) {
        x = Eigen::Map<const Eigen::RowVectorXd>(
            a.data.data() + static_cast<size_t>(i) * a.cols, a.cols);
        acc.noalias() = x * bm;
        Eigen::Map<Eigen::RowVectorXd>(
            out.data.data() + static_cast<size_t>(i) * b.cols, b.cols) = acc;
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    assert(a.rows == b.rows);
    Matrix out(a.cols, b.cols);
    mmap(out).noalias() = cmap(a).transpose() * cmap(b);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    assert(a.cols == b.cols);
    Matrix out(a.rows, b.rows);
    mmap(out).noalias() = cmap(a) * cmap(b).transpose();
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    assert(a.same_shape(b));
    mmap(a) += cmap(b);
}

void axpy_inplace(Matrix& a, double s, const Matrix& b) {
    assert(a.same_shape(b));
    mmap(a) += s * cmap(b);
}

// splitmix64 output mixer
uint64_t RngState::mix_(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t RngState::next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

RngState RngState::split(std::string_view name) const {
    // FNV-1a over the stream name, folded into the current state.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    RngState child(0);
    child.state_ = mix_(state_ ^ h);
    return child;
}

double RngState::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int RngState::uniform_int(int n) {
    assert(n > 0);
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

std::vector<int> RngState::choose(int k, int n) {
    assert(k >= 0 && k <= n);
    // partial Fisher-Yates over an index array
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
        int j = i + uniform_int(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace tabret
