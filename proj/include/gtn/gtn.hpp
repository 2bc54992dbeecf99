#pragma once

#include "gtn/checkpoint.hpp"
#include "gtn/config.hpp"
#include "gtn/dataset.hpp"
#include "gtn/grad_check.hpp"
#include "gtn/gradcheck_suite.hpp"
#include "gtn/image.hpp"
#include "gtn/loss.hpp"
#include "gtn/metrics.hpp"
#include "gtn/model.hpp"
#include "gtn/optim.hpp"
#include "gtn/tensor.hpp"
#include "gtn/train.hpp"
