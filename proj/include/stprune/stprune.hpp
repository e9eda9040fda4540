#pragma once

// Umbrella header.

#include "stprune/allocate.hpp"
#include "stprune/error.hpp"
#include "stprune/id.hpp"
#include "stprune/io.hpp"
#include "stprune/linalg.hpp"
#include "stprune/matrix.hpp"
#include "stprune/model.hpp"
#include "stprune/pipeline.hpp"
#include "stprune/prune.hpp"
#include "stprune/rng.hpp"
#include "stprune/sketch.hpp"
#include "stprune/synthetic.hpp"
