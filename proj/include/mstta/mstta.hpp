#pragma once

#include "mstta/cache.hpp"
#include "mstta/core.hpp"
#include "mstta/data_io.hpp"
#include "mstta/errors.hpp"
#include "mstta/meanshift.hpp"
#include "mstta/pipeline.hpp"
#include "mstta/report_io.hpp"
#include "mstta/rng.hpp"
