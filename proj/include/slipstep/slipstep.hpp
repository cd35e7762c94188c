#pragma once

#include "slipstep/types.hpp"
#include "slipstep/slip_core.hpp"
#include "slipstep/trajectory_library.hpp"
#include "slipstep/active_template.hpp"
#include "slipstep/deadbeat.hpp"
#include "slipstep/step_adaptation.hpp"
#include "slipstep/library_io.hpp"
#include "slipstep/harness/config.hpp"
#include "slipstep/harness/scenario.hpp"
#include "slipstep/harness/noise.hpp"
#include "slipstep/harness/run_log.hpp"
#include "slipstep/harness/closed_loop.hpp"
