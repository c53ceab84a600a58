#pragma once

// Umbrella header for the MPGraf learning-to-rank toolkit.

#include "mpgraf/config.hpp"
#include "mpgraf/eval.hpp"
#include "mpgraf/gnn.hpp"
#include "mpgraf/graphformer.hpp"
#include "mpgraf/letor.hpp"
#include "mpgraf/losses.hpp"
#include "mpgraf/optim.hpp"
#include "mpgraf/rippling.hpp"
#include "mpgraf/rng.hpp"
#include "mpgraf/synthetic.hpp"
#include "mpgraf/tape.hpp"
#include "mpgraf/tensor.hpp"
#include "mpgraf/trainer.hpp"
#include "mpgraf/transformer.hpp"
