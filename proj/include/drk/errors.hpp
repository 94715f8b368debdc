#pragma once

#include <stdexcept>
#include <string>

namespace drk {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

class DegenerateQuaternionError : public Error {
 public:
  explicit DegenerateQuaternionError(const std::string& msg) : Error(msg) {}
};

class DegenerateBasisError : public Error {
 public:
  explicit DegenerateBasisError(const std::string& msg) : Error(msg) {}
};

class GrazingRayError : public Error {
 public:
  explicit GrazingRayError(const std::string& msg) : Error(msg) {}
};

class GrazingViewError : public Error {
 public:
  explicit GrazingViewError(const std::string& msg) : Error(msg) {}
};

class BehindCameraError : public Error {
 public:
  explicit BehindCameraError(const std::string& msg) : Error(msg) {}
};

class DimensionMismatchError : public Error {
 public:
  explicit DimensionMismatchError(const std::string& msg) : Error(msg) {}
};

class ReplayMismatchError : public Error {
 public:
  explicit ReplayMismatchError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

class VersionMismatchError : public Error {
 public:
  explicit VersionMismatchError(const std::string& msg) : Error(msg) {}
};

class CorruptFileError : public Error {
 public:
  explicit CorruptFileError(const std::string& msg) : Error(msg) {}
};

class UnsupportedFormatError : public Error {
 public:
  explicit UnsupportedFormatError(const std::string& msg) : Error(msg) {}
};

class MissingImageError : public Error {
 public:
  explicit MissingImageError(const std::string& msg) : Error(msg) {}
};

class EmptyMeshError : public Error {
 public:
  explicit EmptyMeshError(const std::string& msg) : Error(msg) {}
};

class DegenerateFaceError : public Error {
 public:
  explicit DegenerateFaceError(const std::string& msg) : Error(msg) {}
};

class TooManyVerticesError : public Error {
 public:
  explicit TooManyVerticesError(const std::string& msg) : Error(msg) {}
};

}  // namespace drk
