#pragma once

#include "kcd/error.hpp"
#include "kcd/hin.hpp"
#include "kcd/infusion.hpp"
#include "kcd/io.hpp"
#include "kcd/kg.hpp"
#include "kcd/metrics.hpp"
#include "kcd/model.hpp"
#include "kcd/ops.hpp"
#include "kcd/optim.hpp"
#include "kcd/synthetic.hpp"
#include "kcd/tensor.hpp"
#include "kcd/train.hpp"
#include "kcd/transe.hpp"
#include "kcd/walk.hpp"
