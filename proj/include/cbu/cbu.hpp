#pragma once

// Umbrella header.

#include "cbu/config.hpp"
#include "cbu/curation.hpp"
#include "cbu/digest.hpp"
#include "cbu/error.hpp"
#include "cbu/gateway.hpp"
#include "cbu/http_backend.hpp"
#include "cbu/metrics.hpp"
#include "cbu/model.hpp"
#include "cbu/prompts.hpp"
#include "cbu/run_store.hpp"
#include "cbu/scoring.hpp"
#include "cbu/stats.hpp"
#include "cbu/verdict.hpp"
