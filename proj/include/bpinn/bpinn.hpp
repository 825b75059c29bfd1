#pragma once

#include "bpinn/config.hpp"
#include "bpinn/datagen.hpp"
#include "bpinn/error.hpp"
#include "bpinn/field.hpp"
#include "bpinn/io.hpp"
#include "bpinn/linear_bayes.hpp"
#include "bpinn/metrics.hpp"
#include "bpinn/neural.hpp"
#include "bpinn/operators.hpp"
#include "bpinn/pipeline.hpp"
#include "bpinn/rng.hpp"
#include "bpinn/training.hpp"
#include "bpinn/uq.hpp"
