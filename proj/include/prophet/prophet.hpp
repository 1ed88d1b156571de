#pragma once

#include "prophet/artifact_store.hpp"
#include "prophet/error.hpp"
#include "prophet/evaluator.hpp"
#include "prophet/fixtures.hpp"
#include "prophet/gateway.hpp"
#include "prophet/gateway_http.hpp"
#include "prophet/heuristics.hpp"
#include "prophet/pipeline.hpp"
#include "prophet/prompt.hpp"
#include "prophet/scorer.hpp"
#include "prophet/util.hpp"
#include "prophet/voting.hpp"
