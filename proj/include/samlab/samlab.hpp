#pragma once

// Umbrella header for the whole library.

#include "samlab/checkpoint.hpp"
#include "samlab/config.hpp"
#include "samlab/data.hpp"
#include "samlab/error.hpp"
#include "samlab/graph.hpp"
#include "samlab/harness.hpp"
#include "samlab/metrics.hpp"
#include "samlab/models.hpp"
#include "samlab/optim.hpp"
#include "samlab/params.hpp"
#include "samlab/rng.hpp"
#include "samlab/sam.hpp"
#include "samlab/sharpness.hpp"
#include "samlab/tasks.hpp"
#include "samlab/tensor.hpp"
