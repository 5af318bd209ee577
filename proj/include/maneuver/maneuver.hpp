#pragma once

#include "maneuver/checkpoint.hpp"
#include "maneuver/core.hpp"
#include "maneuver/datagen.hpp"
#include "maneuver/eval.hpp"
#include "maneuver/ingest.hpp"
#include "maneuver/model.hpp"
#include "maneuver/nn.hpp"
#include "maneuver/serialization.hpp"
#include "maneuver/train.hpp"
#include "maneuver/verify.hpp"
