#pragma once

#include <cstdint>
#include <string>

#include "ehmex/ehsim.hpp"

namespace ehmex {

enum class TraceKind { solar_like, constant, square_wave };

TraceKind trace_kind_from_name(const std::string& s);

struct TraceGenParams {
    double duration_s = 86400.0;
    double step_s = 10.0;
    double peak_mw = 0.012;     // constant value / square high / solar peak
    double low_mw = 0.0;        // square wave low
    double period_s = 600.0;    // square wave period
    double day_fraction = 0.5;  // fraction of the solar period with daylight
    double cloud_sigma = 0.25;  // solar cloud-noise strength
};

// Deterministic synthetic power traces. solar_like is a diurnal half-sine
// modulated by a smooth seeded cloud factor, clipped at zero.
PowerTrace gen_trace(TraceKind kind, const TraceGenParams& params, uint64_t seed);

}  // namespace ehmex
