#pragma once

// Umbrella header: the whole library.

#include "fat/augment.hpp"
#include "fat/autodiff.hpp"
#include "fat/config.hpp"
#include "fat/data_synth.hpp"
#include "fat/dataset.hpp"
#include "fat/federation.hpp"
#include "fat/gradcheck.hpp"
#include "fat/harness.hpp"
#include "fat/losses.hpp"
#include "fat/model.hpp"
#include "fat/ops.hpp"
#include "fat/rng.hpp"
#include "fat/serialize.hpp"
#include "fat/tensor.hpp"
#include "fat/trainers.hpp"
