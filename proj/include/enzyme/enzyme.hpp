#pragma once

// Umbrella header: the full incremental view maintenance engine.

#include "enzyme/apply.hpp"
#include "enzyme/bench.hpp"
#include "enzyme/builtins.hpp"
#include "enzyme/changeset.hpp"
#include "enzyme/cost.hpp"
#include "enzyme/deltagen.hpp"
#include "enzyme/enable.hpp"
#include "enzyme/eval.hpp"
#include "enzyme/expr.hpp"
#include "enzyme/fingerprint.hpp"
#include "enzyme/normalize.hpp"
#include "enzyme/pipeline.hpp"
#include "enzyme/plan.hpp"
#include "enzyme/rqg.hpp"
#include "enzyme/schema.hpp"
#include "enzyme/sqlparser.hpp"
#include "enzyme/storage.hpp"
#include "enzyme/value.hpp"
#include "enzyme/workspace.hpp"
