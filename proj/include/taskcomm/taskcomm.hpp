#pragma once

// Everything in one include.

#include "taskcomm/errors.hpp"
#include "taskcomm/numerics.hpp"
#include "taskcomm/random.hpp"
#include "taskcomm/parallel.hpp"
#include "taskcomm/model.hpp"
#include "taskcomm/mcr2.hpp"
#include "taskcomm/bca.hpp"
#include "taskcomm/mm.hpp"
#include "taskcomm/inference.hpp"
#include "taskcomm/spsa.hpp"
#include "taskcomm/unfolded.hpp"
#include "taskcomm/serialize.hpp"
#include "taskcomm/experiment.hpp"
