// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scotlab/config.hpp"
#include "scotlab/data.hpp"
#include "scotlab/experiment.hpp"
#include "scotlab/metrics.hpp"
#include "scotlab/nets.hpp"
#include "scotlab/sampler.hpp"
#include "scotlab/scot.hpp"
#include "scotlab/teacher.hpp"
#include "scotlab/tensor_ad.hpp"
