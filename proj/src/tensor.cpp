#include "dynamar/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace dynamar {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

} // namespace

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    CMap ma(a.data(), a.rows, a.cols);
    CMap mb(b.data(), b.rows, b.cols);
    MMap mc(c.data(), c.rows, c.cols);
    if (acc)
        mc.noalias() += ma * mb;
    else
        mc.noalias() = ma * mb;
}

void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
    CMap ma(a.data(), a.rows, a.cols);
    CMap mb(b.data(), b.rows, b.cols);
    MMap mc(c.data(), c.rows, c.cols);
    if (acc)
        mc.noalias() += ma * mb.transpose();
    else
        mc.noalias() = ma * mb.transpose();
}

void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool acc) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    CMap ma(a.data(), a.rows, a.cols);
    CMap mb(b.data(), b.rows, b.cols);
    MMap mc(c.data(), c.rows, c.cols);
    if (acc)
        mc.noalias() += ma.transpose() * mb;
    else
        mc.noalias() = ma.transpose() * mb;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
    assert(x.same_shape(y));
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] += alpha * x.v[i];
}

bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace dynamar
