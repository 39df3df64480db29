#ifndef LENSEM_LENSEM_HPP
#define LENSEM_LENSEM_HPP

#include "lensem/beamformer.hpp"
#include "lensem/channel.hpp"
#include "lensem/estimators.hpp"
#include "lensem/experiments.hpp"
#include "lensem/linalg.hpp"
#include "lensem/measurement.hpp"
#include "lensem/quantizer.hpp"
#include "lensem/rng.hpp"
#include "lensem/truncated_normal.hpp"
#include "lensem/types.hpp"

#endif // LENSEM_LENSEM_HPP
