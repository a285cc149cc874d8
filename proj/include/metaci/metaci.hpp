#pragma once

#include "metaci/matrix.hpp"
#include "metaci/rng.hpp"
#include "metaci/stats.hpp"
#include "metaci/dgp.hpp"
#include "metaci/io.hpp"
#include "metaci/tasking.hpp"
#include "metaci/cinet.hpp"
#include "metaci/checkpoint.hpp"
#include "metaci/meta.hpp"
#include "metaci/experiment.hpp"
