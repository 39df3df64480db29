#ifndef LENSEM_LINALG_HPP
#define LENSEM_LINALG_HPP

#include <cmath>

#include "lensem/types.hpp"

namespace lensem
{

/// Column-stacking vec(A).
inline CVector vec(const CMatrix& a)
{
    return Eigen::Map<const CVector>(a.data(), a.size());
}

/// Inverse of vec() for an rows x cols matrix.
inline CMatrix unvec(const CVector& v, Eigen::Index rows, Eigen::Index cols)
{
    detail::require(v.size() == rows * cols, "unvec: size mismatch");
    return Eigen::Map<const CMatrix>(v.data(), rows, cols);
}

/// Dense Kronecker product a (x) b.
inline CMatrix kron(const CMatrix& a, const CMatrix& b)
{
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < a.cols(); ++j)
        {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

inline double relative_error(const CMatrix& got, const CMatrix& want)
{
    const double den = want.norm();
    return den > 0.0 ? (got - want).norm() / den : got.norm();
}

} // namespace lensem

#endif // LENSEM_LINALG_HPP
