#ifndef LENSEM_TYPES_HPP
#define LENSEM_TYPES_HPP

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace lensem
{

using cplx = std::complex<double>;

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr double pi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) noexcept { return deg * pi / 180.0; }
inline constexpr double rad2deg(double rad) noexcept { return rad * 180.0 / pi; }

// Raised when an iterative solve or estimator cannot produce a usable result.
class SolverError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Raised for malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

namespace detail
{

inline void require(bool cond, const std::string& what)
{
    if (!cond)
    {
        throw std::invalid_argument(what);
    }
}

} // namespace detail

} // namespace lensem

#endif // LENSEM_TYPES_HPP
