#pragma once

// Umbrella header. The command line layer (cli.hpp) is excluded because it
// pulls in the vendored CLI11 and json headers; include it separately.

#include "polyproj/active_set.hpp"
#include "polyproj/adam.hpp"
#include "polyproj/errors.hpp"
#include "polyproj/hs_jacobian.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"
#include "polyproj/projection.hpp"
#include "polyproj/qr.hpp"
#include "polyproj/rng.hpp"
#include "polyproj/tape.hpp"
#include "polyproj/tasks.hpp"
#include "polyproj/version.hpp"
