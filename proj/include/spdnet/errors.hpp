#pragma once

#include <stdexcept>
#include <string>

namespace spdnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InvalidShape : public Error {
public:
    using Error::Error;
};

/// A dataset directory violates the paired layout (missing counterpart, size mismatch).
class DatasetIntegrity : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

/// A checkpoint cannot be used with the requested model or file version.
class CheckpointIncompatible : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(long step, std::string batch_keys, const std::string& what)
        : Error(what), step_(step), batch_keys_(std::move(batch_keys)) {}

    long step() const noexcept { return step_; }
    const std::string& batch_keys() const noexcept { return batch_keys_; }

private:
    long step_;
    std::string batch_keys_;
};

}  // namespace spdnet
