// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include "featurelab/alloc.hpp"
#include "featurelab/common.hpp"
#include "featurelab/crm.hpp"
#include "featurelab/harness.hpp"
#include "featurelab/levy.hpp"
#include "featurelab/numerics.hpp"
#include "featurelab/sp.hpp"
#include "featurelab/species.hpp"
