#pragma once
// Umbrella header: the whole toolkit.
#include "eploom/core.hpp"
#include "eploom/errors.hpp"
#include "eploom/evolve.hpp"
#include "eploom/io.hpp"
#include "eploom/loops.hpp"
#include "eploom/sense.hpp"
#include "eploom/sweep.hpp"
#include "eploom/topo.hpp"
