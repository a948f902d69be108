#pragma once

#include "fairsim/apl.hpp"
#include "fairsim/baselines.hpp"
#include "fairsim/bias.hpp"
#include "fairsim/config.hpp"
#include "fairsim/diffcore.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/encoder.hpp"
#include "fairsim/error.hpp"
#include "fairsim/metrics.hpp"
#include "fairsim/parallel.hpp"
#include "fairsim/random.hpp"
#include "fairsim/report.hpp"
#include "fairsim/rrm.hpp"
#include "fairsim/simcore.hpp"
#include "fairsim/synth.hpp"
#include "fairsim/pipeline.hpp"
