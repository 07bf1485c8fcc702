#pragma once

#include "nlilex/annotation.hpp"
#include "nlilex/annotation_service.hpp"
#include "nlilex/dataset.hpp"
#include "nlilex/error.hpp"
#include "nlilex/harness.hpp"
#include "nlilex/hybrid.hpp"
#include "nlilex/metrics.hpp"
#include "nlilex/remote.hpp"
#include "nlilex/report.hpp"
#include "nlilex/scorers.hpp"
#include "nlilex/scoring.hpp"
#include "nlilex/text.hpp"
