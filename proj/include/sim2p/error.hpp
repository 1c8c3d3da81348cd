#pragma once

#include <stdexcept>
#include <string>

namespace sim2p {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// argument outside the operation's time/value domain
class DomainError : public Error {
public:
    using Error::Error;
};

// evaluation at a point where the closed form divides by zero
class SingularityError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DegenerateStatsError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// malformed or corrupted on-disk artifact (bad magic, checksum, length)
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace sim2p
