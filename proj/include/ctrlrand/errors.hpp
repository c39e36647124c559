#pragma once

#include <stdexcept>
#include <string>

namespace ctrlrand {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value or unknown key; the message names the key.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A policy head produced something that is not a probability distribution.
class PolicyError : public Error {
public:
    using Error::Error;
};

// An inadmissible regime was requested at the current inventory level.
class MaskViolation : public Error {
public:
    using Error::Error;
};

// Non-finite gradient or training metric.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Base measure / path pair for which the density is undefined.
class DensityError : public Error {
public:
    using Error::Error;
};

// Price lattice too narrow or too coarse for the requested accuracy.
class ResolutionError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace ctrlrand
