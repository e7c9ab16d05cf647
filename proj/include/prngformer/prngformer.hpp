// Umbrella header.
#pragma once

#include "prngformer/circuit.hpp"
#include "prngformer/compilers.hpp"
#include "prngformer/errors.hpp"
#include "prngformer/gadgets.hpp"
#include "prngformer/kernel.hpp"
#include "prngformer/matrix.hpp"
#include "prngformer/oracles.hpp"
#include "prngformer/precision.hpp"
#include "prngformer/serialization.hpp"
#include "prngformer/stats.hpp"
#include "prngformer/tape.hpp"
