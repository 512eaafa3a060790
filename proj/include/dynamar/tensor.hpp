#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace dynamar {

/// Dense row-major 2D tensor of doubles. Vectors are 1xN or Nx1, scalars 1x1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return v[static_cast<std::size_t>(r) * cols + c];
    }
    double at(int r, int c) const {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return v[static_cast<std::size_t>(r) * cols + c];
    }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(0.0); }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor full(int r, int c, double x) {
        Tensor t(r, c);
        t.fill(x);
        return t;
    }
};

// GEMM helpers backed by Eigen maps. `acc` accumulates into C instead of
// overwriting.
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false); // C = A * B
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false); // C = A * B^T
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool acc = false); // C = A^T * B

void axpy(double alpha, const Tensor& x, Tensor& y); // y += alpha * x
bool all_finite(const Tensor& t);

} // namespace dynamar
