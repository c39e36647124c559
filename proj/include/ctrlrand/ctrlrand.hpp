#pragma once

#include "ctrlrand/cli.hpp"
#include "ctrlrand/config.hpp"
#include "ctrlrand/csv.hpp"
#include "ctrlrand/envs.hpp"
#include "ctrlrand/errors.hpp"
#include "ctrlrand/gradcheck.hpp"
#include "ctrlrand/learn.hpp"
#include "ctrlrand/market.hpp"
#include "ctrlrand/mlp.hpp"
#include "ctrlrand/oracle.hpp"
#include "ctrlrand/pointproc.hpp"
#include "ctrlrand/random.hpp"
