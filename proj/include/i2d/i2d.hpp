#pragma once

// Everything in one include.

#include "i2d/aggregation.hpp"
#include "i2d/backend_pool.hpp"
#include "i2d/config.hpp"
#include "i2d/correlation.hpp"
#include "i2d/engine.hpp"
#include "i2d/error.hpp"
#include "i2d/fixtures.hpp"
#include "i2d/manifest.hpp"
#include "i2d/metrics.hpp"
#include "i2d/pipeline.hpp"
#include "i2d/protocol.hpp"
#include "i2d/scoring.hpp"
#include "i2d/sim_backend.hpp"
#include "i2d/simulator.hpp"
#include "i2d/stats.hpp"
#include "i2d/transport.hpp"
#include "i2d/util.hpp"
