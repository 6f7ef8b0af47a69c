#pragma once

#include "nef/core.hpp"
#include "nef/compressors.hpp"
#include "nef/dataset.hpp"
#include "nef/problems.hpp"
#include "nef/schedules.hpp"
#include "nef/algorithms.hpp"
#include "nef/diagnostics.hpp"
#include "nef/config.hpp"
#include "nef/harness.hpp"
