#pragma once

#include "haptoflow/errors.hpp"
#include "haptoflow/sphere_basis.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/model.hpp"
#include "haptoflow/operators.hpp"
#include "haptoflow/integrator.hpp"
#include "haptoflow/verification.hpp"
#include "haptoflow/tensor_field.hpp"
#include "haptoflow/output.hpp"
#include "haptoflow/config.hpp"
#include "haptoflow/benchmarks.hpp"
