#pragma once

#include "qte/counterfactual.hpp"
#include "qte/gsm_prior.hpp"
#include "qte/metrics.hpp"
#include "qte/network.hpp"
#include "qte/neural_mixture.hpp"
#include "qte/nuts.hpp"
#include "qte/parallel.hpp"
#include "qte/propensity.hpp"
#include "qte/rng.hpp"
#include "qte/sampler.hpp"
#include "qte/simgen.hpp"
#include "qte/spline_basis.hpp"
