#pragma once

#include <stdexcept>
#include <string>

namespace eitfer {

// Every failure raised by the library derives from Error. The CLI maps the
// three broad families (config, compute, I/O) onto distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad parameter values handed to a library routine.
class InvalidArgument : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ComputeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Mesh-file and mesh-validation failures.
class ParseError : public IoError {
public:
    using IoError::IoError;
};

class TopologyError : public ComputeError {
public:
    using ComputeError::ComputeError;
};

class IndexError : public ComputeError {
public:
    using ComputeError::ComputeError;
};

} // namespace eitfer
