#pragma once

#include "core.hpp"
#include "linear_map.hpp"
#include "prox.hpp"
#include "regularizer.hpp"
#include "losses.hpp"
#include "constraints.hpp"
#include "problem.hpp"
#include "config.hpp"
#include "params.hpp"
#include "metrics.hpp"
#include "solver.hpp"
#include "data.hpp"
