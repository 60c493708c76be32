#pragma once

#include "fasmap/antenna.hpp"
#include "fasmap/baselines.hpp"
#include "fasmap/channel.hpp"
#include "fasmap/error.hpp"
#include "fasmap/harness.hpp"
#include "fasmap/io.hpp"
#include "fasmap/log.hpp"
#include "fasmap/parallel.hpp"
#include "fasmap/rng.hpp"
#include "fasmap/sampling.hpp"
#include "fasmap/scenario.hpp"
#include "fasmap/solver.hpp"
#include "fasmap/tensor.hpp"
#include "fasmap/tensor_ops.hpp"
