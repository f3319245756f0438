#pragma once

#include "spdnet/autograd.hpp"
#include "spdnet/blocks.hpp"
#include "spdnet/checkpoint.hpp"
#include "spdnet/config.hpp"
#include "spdnet/data.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/image_io.hpp"
#include "spdnet/metrics.hpp"
#include "spdnet/model.hpp"
#include "spdnet/ops.hpp"
#include "spdnet/optim.hpp"
#include "spdnet/random.hpp"
#include "spdnet/rcp.hpp"
#include "spdnet/tensor.hpp"
#include "spdnet/trainer.hpp"
#include "spdnet/wavelet.hpp"
