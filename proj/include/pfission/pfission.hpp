#pragma once

#include "pfission/errors.hpp"
#include "pfission/diffmath.hpp"
#include "pfission/prototypes.hpp"
#include "pfission/losses.hpp"
#include "pfission/data.hpp"
#include "pfission/metrics.hpp"
#include "pfission/config.hpp"
#include "pfission/trainer.hpp"
#include "pfission/gradcheck.hpp"
