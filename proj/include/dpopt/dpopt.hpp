#pragma once

// Umbrella header for the dpopt toolkit: differentially private adaptive
// optimization with sparse, quantized optimizer state, plus the privacy
// accounting, analytic bounds, and experiment harness around it.

#include "compression.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "io.hpp"
#include "models.hpp"
#include "optimizers.hpp"
#include "privacy.hpp"
#include "rng.hpp"
#include "theory.hpp"
#include "vec.hpp"
