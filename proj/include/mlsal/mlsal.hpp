#pragma once

// Everything except the OpenCV-backed I/O headers (image_io, dataset_io,
// plot), which need the mlsal_io target.
#include "mlsal/archive.hpp"
#include "mlsal/autograd.hpp"
#include "mlsal/backbone.hpp"
#include "mlsal/config.hpp"
#include "mlsal/data.hpp"
#include "mlsal/decoder.hpp"
#include "mlsal/edge_module.hpp"
#include "mlsal/errors.hpp"
#include "mlsal/evaluate.hpp"
#include "mlsal/losses.hpp"
#include "mlsal/metrics.hpp"
#include "mlsal/model.hpp"
#include "mlsal/mutual_learning.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/optimizer.hpp"
#include "mlsal/params.hpp"
#include "mlsal/supervision.hpp"
#include "mlsal/tensor.hpp"
#include "mlsal/trainer.hpp"
