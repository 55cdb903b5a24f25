#pragma once

#include "battopt/battery.hpp"
#include "battopt/bnb.hpp"
#include "battopt/config.hpp"
#include "battopt/csv.hpp"
#include "battopt/dispatch.hpp"
#include "battopt/errors.hpp"
#include "battopt/harness.hpp"
#include "battopt/metrics.hpp"
#include "battopt/qp.hpp"
