#pragma once

#include <stdexcept>
#include <string>

namespace vreg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad scenario/feeder/inventory input: parse failures and semantic
/// validation (limits, grids, slow-to-fast ratio).
struct ConfigError : Error {
    using Error::Error;
};

/// The feeder graph is not a tree rooted at the substation.
struct TopologyError : ConfigError {
    using ConfigError::ConfigError;
};

/// Malformed profile CSV rows or inconsistent time steps.
struct IngestError : Error {
    using Error::Error;
};

/// Power-flow sweep or dual iteration left the stable region.
struct DivergenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Vector arguments whose lengths do not match the model.
struct ShapeError : Error {
    using Error::Error;
};

/// Diminishing stepsize queried before the first full slow frame.
struct ClockError : Error {
    using Error::Error;
};

/// Comfort band unreachable at every feasible consumption rate. Carries the
/// grid rate minimizing the band violation so the caller can pin the device.
struct HullInfeasibleError : Error {
    HullInfeasibleError(const std::string& what, double nearest_rate_w)
        : Error(what), nearest_rate_w(nearest_rate_w) {}
    double nearest_rate_w;
};

}  // namespace vreg
