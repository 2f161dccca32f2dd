#pragma once

#include "seqmenu/activations.hpp"
#include "seqmenu/baselines.hpp"
#include "seqmenu/config.hpp"
#include "seqmenu/core_types.hpp"
#include "seqmenu/dp_solver.hpp"
#include "seqmenu/entry_fee.hpp"
#include "seqmenu/errors.hpp"
#include "seqmenu/fpi.hpp"
#include "seqmenu/harness.hpp"
#include "seqmenu/item_set.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/nn.hpp"
#include "seqmenu/oracles.hpp"
#include "seqmenu/parallel.hpp"
#include "seqmenu/rng.hpp"
#include "seqmenu/soft_choice.hpp"
#include "seqmenu/valuations.hpp"
