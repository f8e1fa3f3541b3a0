// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fcarac/array.hpp"
#include "fcarac/autodiff.hpp"
#include "fcarac/baselines.hpp"
#include "fcarac/checkpoint.hpp"
#include "fcarac/config.hpp"
#include "fcarac/density.hpp"
#include "fcarac/encoder.hpp"
#include "fcarac/head.hpp"
#include "fcarac/metrics.hpp"
#include "fcarac/model.hpp"
#include "fcarac/mtgc.hpp"
#include "fcarac/optim.hpp"
#include "fcarac/sampling.hpp"
#include "fcarac/seqdata.hpp"
#include "fcarac/tka.hpp"
#include "fcarac/train.hpp"
