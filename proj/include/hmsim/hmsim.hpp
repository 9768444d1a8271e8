#pragma once

#include "hmsim/types.hpp"
#include "hmsim/geometry.hpp"
#include "hmsim/timing.hpp"
#include "hmsim/energy.hpp"
#include "hmsim/channel.hpp"
#include "hmsim/dram_cache.hpp"
#include "hmsim/bypass.hpp"
#include "hmsim/l2_ctc.hpp"
#include "hmsim/workload.hpp"
#include "hmsim/stats.hpp"
#include "hmsim/config.hpp"
#include "hmsim/engine.hpp"
#include "hmsim/report.hpp"
