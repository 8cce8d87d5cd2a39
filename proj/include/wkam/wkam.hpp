#pragma once

// Numerical headers only. Run I/O and the experiment runner (OpenSSL, Boost, toml++) live in
// wkam/io.hpp and wkam/experiment.hpp.
#include "wkam/core.hpp"
#include "wkam/hamiltonian.hpp"
#include "wkam/grid_field.hpp"
#include "wkam/action.hpp"
#include "wkam/lax_oleinik.hpp"
#include "wkam/semiconcave.hpp"
#include "wkam/singular_flow.hpp"
#include "wkam/assignment.hpp"
#include "wkam/transport.hpp"
#include "wkam/measure_hj.hpp"
