#pragma once

#include "maneuver/nn/adam.hpp"
#include "maneuver/nn/batchnorm.hpp"
#include "maneuver/nn/conv1x1.hpp"
#include "maneuver/nn/dense.hpp"
#include "maneuver/nn/grad_check.hpp"
#include "maneuver/nn/init.hpp"
#include "maneuver/nn/lstm.hpp"
#include "maneuver/nn/softmax.hpp"
