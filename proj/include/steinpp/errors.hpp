#pragma once

#include <stdexcept>
#include <string>

namespace steinpp {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : Error {
    using Error::Error;
};

/// A point lies outside the L-infinity lifting window around the anchor.
struct LiftAmbiguous : Error {
    using Error::Error;
};

/// Ball radius r with 2r >= 1: the ball does not embed in the unit torus.
struct BallTooLarge : Error {
    using Error::Error;
};

struct QuadratureNotConverged : Error {
    using Error::Error;
};

/// radius_for_mass target exceeds the mass of the largest admissible ball.
struct TargetUnreachable : Error {
    using Error::Error;
};

/// Binomial sampling requires a probability measure (total mass 1).
struct NotAProbability : Error {
    using Error::Error;
};

/// Rejection sampler exceeded its proposal budget.
struct SamplerStuck : Error {
    using Error::Error;
};

struct NotEnoughPoints : Error {
    using Error::Error;
};

struct TooFewSamples : Error {
    using Error::Error;
};

struct ArityUnsupported : Error {
    using Error::Error;
};

/// Truncation set S_x fails Q(S_x) < 1 (binomial bound hypothesis).
struct StabilizationTooLarge : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace steinpp
