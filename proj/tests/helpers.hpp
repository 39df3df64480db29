#ifndef LENSEM_TESTS_HELPERS_HPP
#define LENSEM_TESTS_HELPERS_HPP

#include <random>

#include "lensem/lensem.hpp"

namespace testing_helpers
{

inline lensem::CMatrix random_complex(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
    lensem::Rng rng(seed);
    lensem::CMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
    {
        for (Eigen::Index i = 0; i < rows; ++i)
        {
            m(i, j) = rng.complex_normal(1.0);
        }
    }
    return m;
}

/// Full-size config with a reduced training length for fast tests.
inline lensem::ExperimentConfig small_config(int t_slots = 40)
{
    lensem::ExperimentConfig cfg;
    cfg.t_slots = t_slots;
    cfg.n_trials = 4;
    cfg.snr_grid_db = {-5.0, 15.0};
    cfg.bits_list = {3};
    cfg.threads = 1;
    return cfg;
}

/// 3x3 array behind a 3x3 lens: L = M = 9, so Psi can have full column rank.
inline lensem::ExperimentConfig square_config(int t_slots = 30)
{
    lensem::ExperimentConfig cfg = small_config(t_slots);
    cfg.geometry.n_az = 3;
    cfg.geometry.n_el = 3;
    cfg.n_r = 9;
    cfg.topology = {3, 3, 3, 3};
    return cfg;
}

} // namespace testing_helpers

#endif // LENSEM_TESTS_HELPERS_HPP
