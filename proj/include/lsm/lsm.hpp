#pragma once

// Umbrella header. render.hpp is separate because it needs libpng.

#include "lsm/common.hpp"
#include "lsm/spectra.hpp"
#include "lsm/encode.hpp"
#include "lsm/reservoir.hpp"
#include "lsm/autodiff.hpp"
#include "lsm/readout.hpp"
#include "lsm/liquid.hpp"
#include "lsm/train.hpp"
#include "lsm/metrics.hpp"
#include "lsm/hpo.hpp"
#include "lsm/pipeline.hpp"
#include "lsm/manifest.hpp"
