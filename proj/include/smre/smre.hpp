#pragma once

/// Umbrella header for the semi-Markov random evolution library.

#include "common.hpp"
#include "random.hpp"
#include "model.hpp"
#include "field.hpp"
#include "operators.hpp"
#include "regular.hpp"
#include "singular.hpp"
#include "expansion.hpp"
#include "oracle.hpp"
#include "remainder.hpp"
#include "config.hpp"
#include "cli.hpp"
