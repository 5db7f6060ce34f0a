#pragma once

// Umbrella header for the VIRD cross-view pose estimation library.

#include "vird/common.hpp"
#include "vird/types.hpp"
#include "vird/config.hpp"
#include "vird/kernels.hpp"
#include "vird/autodiff.hpp"
#include "vird/nn.hpp"
#include "vird/geometry.hpp"
#include "vird/image.hpp"
#include "vird/synthdata.hpp"
#include "vird/cepa.hpp"
#include "vird/encoder.hpp"
#include "vird/model.hpp"
#include "vird/reconstruction.hpp"
#include "vird/posesearch.hpp"
#include "vird/experiment.hpp"
