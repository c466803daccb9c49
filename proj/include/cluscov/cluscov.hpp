#pragma once

#include "cluscov/cluster_data.hpp"
#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/gmm.hpp"
#include "cluscov/io.hpp"
#include "cluscov/linear.hpp"
#include "cluscov/mc.hpp"
#include "cluscov/mle.hpp"
#include "cluscov/numeric.hpp"
#include "cluscov/rng.hpp"
#include "cluscov/stats.hpp"

namespace cluscov {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cluscov
