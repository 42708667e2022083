#pragma once

#include "spdelab/errors.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/model.hpp"
#include "spdelab/families.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/norms.hpp"
#include "spdelab/cascade.hpp"
#include "spdelab/verify.hpp"
#include "spdelab/config.hpp"
#include "spdelab/acceptance.hpp"
