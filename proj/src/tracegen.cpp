#include "ehmex/tracegen.hpp"

#include <cmath>

#include "ehmex/errors.hpp"
#include "ehmex/rng.hpp"

namespace ehmex {

TraceKind trace_kind_from_name(const std::string& s) {
    if (s == "solar_like") return TraceKind::solar_like;
    if (s == "constant") return TraceKind::constant;
    if (s == "square_wave") return TraceKind::square_wave;
    throw ConfigError("unknown trace kind: " + s);
}

PowerTrace gen_trace(TraceKind kind, const TraceGenParams& p, uint64_t seed) {
    if (p.duration_s <= 0.0 || p.step_s <= 0.0 || p.duration_s < p.step_s)
        throw ConfigError("trace generation needs duration >= step > 0");
    if (p.peak_mw < 0.0) throw ConfigError("trace peak power must be >= 0");
    PowerTrace tr;
    const int n = static_cast<int>(std::floor(p.duration_s / p.step_s)) + 1;
    tr.time_s.reserve(static_cast<size_t>(n));
    tr.power_mw.reserve(static_cast<size_t>(n));
    Rng rng = Rng(seed).stream("tracegen");
    // Smooth cloud factor: an AR(1) walk in log space, one step per sample.
    double cloud = 0.0;
    const double ar = 0.995;
    for (int i = 0; i < n; ++i) {
        const double t = i * p.step_s;
        double power = 0.0;
        switch (kind) {
            case TraceKind::constant:
                power = p.peak_mw;
                break;
            case TraceKind::square_wave: {
                const double phase = std::fmod(t, p.period_s) / p.period_s;
                power = phase < 0.5 ? p.peak_mw : p.low_mw;
                break;
            }
            case TraceKind::solar_like: {
                const double day = 86400.0;
                const double daylight = day * p.day_fraction;
                const double tod = std::fmod(t, day);
                const double sun =
                    (tod < daylight) ? std::sin(M_PI * tod / daylight) : 0.0;
                cloud = ar * cloud + p.cloud_sigma * std::sqrt(1.0 - ar * ar) * rng.gaussian();
                power = p.peak_mw * sun * std::exp(cloud - 0.5 * p.cloud_sigma * p.cloud_sigma);
                break;
            }
        }
        tr.time_s.push_back(t);
        tr.power_mw.push_back(std::max(0.0, power));
    }
    tr.validate();
    return tr;
}

}  // namespace ehmex
