#pragma once

#include "core.hpp"
#include "penalties.hpp"
#include "operators.hpp"
#include "solvers.hpp"
#include "msdata.hpp"
#include "metrics.hpp"
#include "experiment.hpp"
