#pragma once

#include "koopquad/analysis.hpp"
#include "koopquad/edmd.hpp"
#include "koopquad/lift.hpp"
#include "koopquad/linalg.hpp"
#include "koopquad/quadrotor.hpp"
#include "koopquad/signal.hpp"
