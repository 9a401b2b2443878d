// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dsp/bounded_queue.hpp"
#include "dsp/commands.hpp"
#include "dsp/config.hpp"
#include "dsp/data.hpp"
#include "dsp/diagnostics.hpp"
#include "dsp/errors.hpp"
#include "dsp/gradcheck.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/optim.hpp"
#include "dsp/pipeline.hpp"
#include "dsp/pipeline_config.hpp"
#include "dsp/rng.hpp"
#include "dsp/run_io.hpp"
#include "dsp/schedule_sim.hpp"
#include "dsp/tensor.hpp"
#include "dsp/theory.hpp"
