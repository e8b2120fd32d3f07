#pragma once

#include "frfkit/closed_loop.hpp"
#include "frfkit/error.hpp"
#include "frfkit/estimators.hpp"
#include "frfkit/frf.hpp"
#include "frfkit/io.hpp"
#include "frfkit/parallel.hpp"
#include "frfkit/random.hpp"
#include "frfkit/scenario.hpp"
#include "frfkit/signals.hpp"
#include "frfkit/state_space.hpp"
