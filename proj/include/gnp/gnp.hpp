#pragma once

#include "gnp/tensor.hpp"
#include "gnp/ops.hpp"
#include "gnp/linalg.hpp"
#include "gnp/rng.hpp"
#include "gnp/kernels.hpp"
#include "gnp/oracle.hpp"
#include "gnp/tasks.hpp"
#include "gnp/nn.hpp"
#include "gnp/model_spec.hpp"
#include "gnp/encoders.hpp"
#include "gnp/heads.hpp"
#include "gnp/model.hpp"
#include "gnp/checkpoint.hpp"
#include "gnp/trainer.hpp"
#include "gnp/eval.hpp"
#include "gnp/io.hpp"
