#pragma once
// Umbrella header: the whole library in dependency order.

#include "tbk/types.hpp"
#include "tbk/rng.hpp"
#include "tbk/registry.hpp"
#include "tbk/profile.hpp"
#include "tbk/json_io.hpp"
#include "tbk/sync.hpp"
#include "tbk/cases.hpp"
#include "tbk/oracle.hpp"
#include "tbk/host_fs.hpp"
#include "tbk/clock_device.hpp"
#include "tbk/protected_store.hpp"
#include "tbk/virtqueue.hpp"
#include "tbk/shim.hpp"
#include "tbk/generator.hpp"
#include "tbk/mutation.hpp"
#include "tbk/t_agent.hpp"
#include "tbk/h_monitor.hpp"
#include "tbk/analyzer.hpp"
#include "tbk/campaign.hpp"
#include "tbk/trace_adapter.hpp"
