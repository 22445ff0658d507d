// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mimose/baselines.hpp"
#include "mimose/collector.hpp"
#include "mimose/estimator.hpp"
#include "mimose/harness.hpp"
#include "mimose/model_spec.hpp"
#include "mimose/scheduler.hpp"
#include "mimose/simulator.hpp"
#include "mimose/workload.hpp"
