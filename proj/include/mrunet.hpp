#pragma once

#include "mrunet/autodiff.hpp"
#include "mrunet/blocks.hpp"
#include "mrunet/data.hpp"
#include "mrunet/error.hpp"
#include "mrunet/gradcheck.hpp"
#include "mrunet/harness.hpp"
#include "mrunet/loss.hpp"
#include "mrunet/metrics.hpp"
#include "mrunet/model_graph.hpp"
#include "mrunet/models.hpp"
#include "mrunet/network.hpp"
#include "mrunet/nn_ops.hpp"
#include "mrunet/tensor.hpp"
#include "mrunet/tensor_io.hpp"
#include "mrunet/train.hpp"
