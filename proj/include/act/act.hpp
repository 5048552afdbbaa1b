#pragma once

#include "act/error.hpp"
#include "act/rng.hpp"
#include "act/parallel.hpp"
#include "act/core/types.hpp"
#include "act/core/jsonl.hpp"
#include "act/core/correction.hpp"
#include "act/backends/criticism.hpp"
#include "act/backends/parse.hpp"
#include "act/backends/prompt.hpp"
#include "act/backends/chat.hpp"
#include "act/backends/http_backend.hpp"
#include "act/backends/simulator.hpp"
#include "act/backends/annotate.hpp"
#include "act/sampling/plan.hpp"
#include "act/metrics/quality.hpp"
#include "act/loss/act_loss.hpp"
#include "act/trainer/softmax.hpp"
#include "act/trainer/gap.hpp"
#include "act/orchestrator/config.hpp"
#include "act/orchestrator/run.hpp"
#include "act/orchestrator/http_api.hpp"
