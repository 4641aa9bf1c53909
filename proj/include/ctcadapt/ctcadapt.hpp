// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctcadapt/checkpoint.hpp"
#include "ctcadapt/config.hpp"
#include "ctcadapt/ctc.hpp"
#include "ctcadapt/error.hpp"
#include "ctcadapt/experiment.hpp"
#include "ctcadapt/gradcheck.hpp"
#include "ctcadapt/layout.hpp"
#include "ctcadapt/model.hpp"
#include "ctcadapt/ops.hpp"
#include "ctcadapt/optim.hpp"
#include "ctcadapt/schedule.hpp"
#include "ctcadapt/synthdata.hpp"
#include "ctcadapt/tensor.hpp"
#include "ctcadapt/train.hpp"
#include "ctcadapt/transfer.hpp"
