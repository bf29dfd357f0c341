// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sdlab/analysis.hpp"
#include "sdlab/config.hpp"
#include "sdlab/diffusion.hpp"
#include "sdlab/distill.hpp"
#include "sdlab/errors.hpp"
#include "sdlab/io.hpp"
#include "sdlab/lab.hpp"
#include "sdlab/models.hpp"
#include "sdlab/ops.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/rng.hpp"
#include "sdlab/spectral.hpp"
#include "sdlab/tensor.hpp"
