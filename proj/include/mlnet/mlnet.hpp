#pragma once

// Umbrella header for the mlnet saliency-prediction library.

#include "mlnet/checkpoint.hpp"
#include "mlnet/config.hpp"
#include "mlnet/dataset.hpp"
#include "mlnet/emd.hpp"
#include "mlnet/error.hpp"
#include "mlnet/gradcheck.hpp"
#include "mlnet/importance.hpp"
#include "mlnet/loss.hpp"
#include "mlnet/metrics.hpp"
#include "mlnet/network.hpp"
#include "mlnet/ops.hpp"
#include "mlnet/optimizer.hpp"
#include "mlnet/pnm.hpp"
#include "mlnet/preprocess.hpp"
#include "mlnet/prior.hpp"
#include "mlnet/rng.hpp"
#include "mlnet/tensor.hpp"
#include "mlnet/train.hpp"
