#pragma once

#include <stdexcept>
#include <string>

namespace cmda {

// Base for all classified pipeline errors. Subclasses map 1:1 to CLI exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input bytes (bad magic, inconsistent header, non-finite fields).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Well-formed but outside the supported subset (datatype, multi-frame, ...).
class UnsupportedError : public Error {
public:
    explicit UnsupportedError(const std::string& msg) : Error(msg) {}
};

// Payload shorter than the header promises.
class TruncationError : public Error {
public:
    explicit TruncationError(const std::string& msg) : Error(msg) {}
};

// Invalid argument / configuration value / violated precondition.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Failed file system interaction.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Bounded-retry procedural generation gave up.
class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

}  // namespace cmda
