// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tokshift/cross_sampling.hpp"
#include "tokshift/dist_core.hpp"
#include "tokshift/dump.hpp"
#include "tokshift/errors.hpp"
#include "tokshift/mechanics.hpp"
#include "tokshift/policies.hpp"
#include "tokshift/report.hpp"
#include "tokshift/rl_weighting.hpp"
#include "tokshift/rng.hpp"
#include "tokshift/seq_bounds.hpp"
#include "tokshift/shift_analysis.hpp"
