#pragma once

#include "collab/common.hpp"
#include "collab/config.hpp"
#include "collab/embedding.hpp"
#include "collab/error.hpp"
#include "collab/features.hpp"
#include "collab/lstmp.hpp"
#include "collab/metrics.hpp"
#include "collab/models.hpp"
#include "collab/multitask.hpp"
#include "collab/pipeline.hpp"
#include "collab/scoring.hpp"
#include "collab/training.hpp"
