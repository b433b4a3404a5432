#pragma once

// Umbrella header for the whole library.
#include "cdlnet/core.hpp"
#include "cdlnet/image.hpp"
#include "cdlnet/image_io.hpp"
#include "cdlnet/conv.hpp"
#include "cdlnet/sparse.hpp"
#include "cdlnet/model.hpp"
#include "cdlnet/losses.hpp"
#include "cdlnet/config.hpp"
#include "cdlnet/optim.hpp"
#include "cdlnet/checkpoint.hpp"
#include "cdlnet/noise_est.hpp"
#include "cdlnet/train.hpp"
#include "cdlnet/eval.hpp"
#include "cdlnet/synthetic.hpp"
