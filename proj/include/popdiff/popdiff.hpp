#pragma once

#include "popdiff/checkpoint.hpp"
#include "popdiff/commands.hpp"
#include "popdiff/config.hpp"
#include "popdiff/csv.hpp"
#include "popdiff/diffusion.hpp"
#include "popdiff/error.hpp"
#include "popdiff/gradcheck.hpp"
#include "popdiff/metrics.hpp"
#include "popdiff/ndarray.hpp"
#include "popdiff/network.hpp"
#include "popdiff/ops.hpp"
#include "popdiff/schema.hpp"
#include "popdiff/tape.hpp"
#include "popdiff/toy.hpp"
#include "popdiff/trainer.hpp"
