#pragma once

#include <stdexcept>
#include <string>

namespace twostream {

// Base for every fault this library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rejected input: shape mismatch, label out of range, wrong label space.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

// Malformed data on ingestion (dataset files, mapping tables, tensors).
class IngestError : public Error {
public:
    using Error::Error;
};

// Training fault (empty dataset, non-finite gradients).
class TrainError : public Error {
public:
    using Error::Error;
};

// Wire-protocol fault; the message names the offending field.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Simulation fault; the message names the offending step.
class SimError : public Error {
public:
    using Error::Error;
};

// Bad configuration value (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Referenced artifact does not exist (CLI exit code 3).
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

} // namespace twostream
