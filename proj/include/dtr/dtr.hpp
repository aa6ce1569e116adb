#pragma once

#include "dtr/dgp.hpp"
#include "dtr/error.hpp"
#include "dtr/gest.hpp"
#include "dtr/harness.hpp"
#include "dtr/infer.hpp"
#include "dtr/model.hpp"
#include "dtr/nuisance.hpp"
#include "dtr/report.hpp"
#include "dtr/rng.hpp"
#include "dtr/smax.hpp"
