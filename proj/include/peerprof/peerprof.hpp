#pragma once

#include "peerprof/clock.hpp"
#include "peerprof/clock_sync.hpp"
#include "peerprof/error.hpp"
#include "peerprof/metrics_tree.hpp"
#include "peerprof/pipeline.hpp"
#include "peerprof/reporting.hpp"
#include "peerprof/sim_link.hpp"
#include "peerprof/stages.hpp"
#include "peerprof/stats.hpp"
#include "peerprof/transport.hpp"
#include "peerprof/wire.hpp"
