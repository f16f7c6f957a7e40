#pragma once

// Umbrella header for the SegMate library.

#include "segmate/blocks.hpp"
#include "segmate/checkpoint.hpp"
#include "segmate/common.hpp"
#include "segmate/cost_model.hpp"
#include "segmate/losses.hpp"
#include "segmate/metrics.hpp"
#include "segmate/model.hpp"
#include "segmate/ops.hpp"
#include "segmate/optim.hpp"
#include "segmate/rng.hpp"
#include "segmate/smv.hpp"
#include "segmate/tensor.hpp"
#include "segmate/trainer.hpp"
#include "segmate/volume.hpp"
