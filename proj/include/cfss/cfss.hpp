#pragma once

// Umbrella header.

#include "cfss/common.hpp"
#include "cfss/topology.hpp"
#include "cfss/allocation.hpp"
#include "cfss/estimation.hpp"
#include "cfss/rates.hpp"
#include "cfss/soc_barrier.hpp"
#include "cfss/power_control.hpp"
#include "cfss/montecarlo.hpp"
#include "cfss/experiment.hpp"
