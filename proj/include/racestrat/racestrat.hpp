#pragma once

#include "racestrat/autodiff.hpp"
#include "racestrat/config.hpp"
#include "racestrat/errors.hpp"
#include "racestrat/forward_sim.hpp"
#include "racestrat/io.hpp"
#include "racestrat/nlp.hpp"
#include "racestrat/nlp_solver.hpp"
#include "racestrat/ocp_core.hpp"
#include "racestrat/pipeline.hpp"
#include "racestrat/powertrain_loss.hpp"
#include "racestrat/thermal_network.hpp"
#include "racestrat/vehicle_track.hpp"
