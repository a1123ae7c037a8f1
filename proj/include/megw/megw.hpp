#pragma once

#include "megw/bytes.hpp"
#include "megw/control_plane.hpp"
#include "megw/errors.hpp"
#include "megw/gtp.hpp"
#include "megw/harness.hpp"
#include "megw/ipv4.hpp"
#include "megw/region_sim.hpp"
#include "megw/rendezvous.hpp"
#include "megw/s1ap_lite.hpp"
#include "megw/steering.hpp"
