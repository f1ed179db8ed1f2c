#pragma once

#include "dbridge/autodiff/ops.hpp"
#include "dbridge/bridge.hpp"
#include "dbridge/dpi.hpp"
#include "dbridge/harness/checkpoint.hpp"
#include "dbridge/harness/config.hpp"
#include "dbridge/harness/gradcheck.hpp"
#include "dbridge/harness/optim.hpp"
#include "dbridge/harness/train.hpp"
#include "dbridge/lab/two_point_chain.hpp"
#include "dbridge/losses.hpp"
#include "dbridge/metrics.hpp"
#include "dbridge/networks.hpp"
#include "dbridge/targets/registry.hpp"
