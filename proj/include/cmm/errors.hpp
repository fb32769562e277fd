#pragma once

#include <stdexcept>
#include <string>

namespace cmm {

/// Base type for all recoverable library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidShape : public Error {
public:
    explicit InvalidShape(const std::string& what) : Error(what) {}
};

class NotSymmetric : public Error {
public:
    explicit NotSymmetric(const std::string& what) : Error(what) {}
};

class NotPSD : public Error {
public:
    explicit NotPSD(const std::string& what) : Error(what) {}
};

class InsufficientSamples : public Error {
public:
    explicit InsufficientSamples(const std::string& what) : Error(what) {}
};

class ArchitectureMismatch : public Error {
public:
    explicit ArchitectureMismatch(const std::string& what) : Error(what) {}
};

class InvalidConfig : public Error {
public:
    explicit InvalidConfig(const std::string& what) : Error(what) {}
};

class InvalidModel : public Error {
public:
    explicit InvalidModel(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

class UnsupportedVersion : public Error {
public:
    explicit UnsupportedVersion(const std::string& what) : Error(what) {}
};

class CorruptCheckpoint : public Error {
public:
    explicit CorruptCheckpoint(const std::string& what) : Error(what) {}
};

class NotAMatrixFile : public Error {
public:
    explicit NotAMatrixFile(const std::string& what) : Error(what) {}
};

} // namespace cmm
