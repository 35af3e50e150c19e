#pragma once

#include "descsel/core.hpp"
#include "descsel/experiments.hpp"
#include "descsel/io.hpp"
#include "descsel/metrics.hpp"
#include "descsel/scoring.hpp"
#include "descsel/shape.hpp"
#include "descsel/synthetic.hpp"
