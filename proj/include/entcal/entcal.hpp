#pragma once

#include "entcal/calibrate.hpp"
#include "entcal/core.hpp"
#include "entcal/drift.hpp"
#include "entcal/enumerate.hpp"
#include "entcal/estimate.hpp"
#include "entcal/exact.hpp"
#include "entcal/functional.hpp"
#include "entcal/limited_memory.hpp"
#include "entcal/markov.hpp"
#include "entcal/memory.hpp"
#include "entcal/mixture.hpp"
#include "entcal/model.hpp"
#include "entcal/optimize.hpp"
#include "entcal/rng.hpp"
#include "entcal/serialize.hpp"
#include "entcal/tabular.hpp"
#include "entcal/tilt.hpp"
