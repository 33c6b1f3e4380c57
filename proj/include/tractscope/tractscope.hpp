#pragma once

#include "tractscope/error.hpp"
#include "tractscope/ingest.hpp"
#include "tractscope/weights.hpp"
#include "tractscope/stats.hpp"
#include "tractscope/hotspot.hpp"
#include "tractscope/ols.hpp"
#include "tractscope/spatial_models.hpp"
#include "tractscope/cluster.hpp"
#include "tractscope/render.hpp"
#include "tractscope/pipeline.hpp"
