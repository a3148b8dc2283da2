#pragma once

#include "mums/config.hpp"
#include "mums/costsel.hpp"
#include "mums/domain.hpp"
#include "mums/estimator.hpp"
#include "mums/harness.hpp"
#include "mums/lp.hpp"
#include "mums/playback.hpp"
#include "mums/scheduler.hpp"
#include "mums/simnet.hpp"
#include "mums/transport.hpp"
