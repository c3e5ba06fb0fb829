#pragma once

#include "harness.hpp"
#include "metrics.hpp"
#include "records.hpp"
#include "scoring.hpp"
#include "synth.hpp"
