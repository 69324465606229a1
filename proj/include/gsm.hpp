#pragma once

#include "gsm/errors.hpp"
#include "gsm/schell_model.hpp"
#include "gsm/hermite.hpp"
#include "gsm/mode_spectrum.hpp"
#include "gsm/modal_decomp.hpp"
#include "gsm/speckle.hpp"
#include "gsm/filters.hpp"
#include "gsm/hbt.hpp"
#include "gsm/metrics.hpp"
