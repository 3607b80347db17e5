// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "selftrain/augment.hpp"
#include "selftrain/autodiff.hpp"
#include "selftrain/batch.hpp"
#include "selftrain/datasets.hpp"
#include "selftrain/example.hpp"
#include "selftrain/experiment.hpp"
#include "selftrain/grid.hpp"
#include "selftrain/loss_combine.hpp"
#include "selftrain/metrics.hpp"
#include "selftrain/model.hpp"
#include "selftrain/optim.hpp"
#include "selftrain/param_io.hpp"
#include "selftrain/pseudo_label.hpp"
#include "selftrain/random.hpp"
#include "selftrain/records.hpp"
#include "selftrain/report.hpp"
#include "selftrain/soft_nms.hpp"
#include "selftrain/sweep.hpp"
#include "selftrain/tensor.hpp"
#include "selftrain/trainer.hpp"
