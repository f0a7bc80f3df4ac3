#pragma once

#include "ssn/baselines.hpp"
#include "ssn/config.hpp"
#include "ssn/core_math.hpp"
#include "ssn/data.hpp"
#include "ssn/dataset.hpp"
#include "ssn/error.hpp"
#include "ssn/experiment.hpp"
#include "ssn/layer.hpp"
#include "ssn/metrics.hpp"
#include "ssn/model_io.hpp"
#include "ssn/network.hpp"
#include "ssn/random.hpp"
#include "ssn/types.hpp"
