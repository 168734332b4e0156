#pragma once

// Umbrella header for the meshfree collocation toolkit.

#include "colloc/assembly.hpp"
#include "colloc/basis.hpp"
#include "colloc/cloud.hpp"
#include "colloc/engines.hpp"
#include "colloc/errors.hpp"
#include "colloc/methods.hpp"
#include "colloc/multi_index.hpp"
#include "colloc/study.hpp"
