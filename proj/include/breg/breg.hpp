#pragma once

#include "breg/bypass.hpp"
#include "breg/checkpoint.hpp"
#include "breg/config.hpp"
#include "breg/data.hpp"
#include "breg/error.hpp"
#include "breg/gradcheck.hpp"
#include "breg/layers.hpp"
#include "breg/metrics.hpp"
#include "breg/model.hpp"
#include "breg/report.hpp"
#include "breg/rng.hpp"
#include "breg/tape.hpp"
#include "breg/tensor.hpp"
#include "breg/training.hpp"
