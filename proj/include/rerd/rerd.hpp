#pragma once

// Umbrella header: reward-guided generation and iterative refinement for
// masked discrete diffusion over small token alphabets, with an exact
// enumeration harness for verifying the target distribution.

#include "rerd/rng.hpp"
#include "rerd/errors.hpp"
#include "rerd/diffusion.hpp"
#include "rerd/model.hpp"
#include "rerd/reward.hpp"
#include "rerd/guidance.hpp"
#include "rerd/twisted.hpp"
#include "rerd/verify.hpp"
#include "rerd/verify_suite.hpp"
#include "rerd/metrics.hpp"
#include "rerd/config.hpp"
#include "rerd/experiment.hpp"
#include "rerd/svg.hpp"
