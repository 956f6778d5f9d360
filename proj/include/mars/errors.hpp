#pragma once

#include <stdexcept>
#include <string>

namespace mars {

// All recoverable failures are reported as typed exceptions so callers can
// distinguish input problems from bugs.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonPositiveDepth : Error {
  explicit NonPositiveDepth(const std::string& msg = "depth must be > 0") : Error(msg) {}
};

struct DegenerateModel : Error {
  explicit DegenerateModel(const std::string& msg) : Error(msg) {}
};

struct NonOrthogonal : Error {
  explicit NonOrthogonal(const std::string& msg) : Error(msg) {}
};

struct NoConvergence : Error {
  explicit NoConvergence(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

struct DecodeError : Error {
  explicit DecodeError(const std::string& msg) : Error(msg) {}
};

struct NotThreeChannel : Error {
  explicit NotThreeChannel(const std::string& msg = "expected a 3-channel image") : Error(msg) {}
};

struct TooSmall : Error {
  explicit TooSmall(const std::string& msg) : Error(msg) {}
};

struct TooFewPoints : Error {
  explicit TooFewPoints(const std::string& msg) : Error(msg) {}
};

struct DegenerateConfiguration : Error {
  explicit DegenerateConfiguration(const std::string& msg) : Error(msg) {}
};

struct DegenerateSamples : Error {
  explicit DegenerateSamples(const std::string& msg) : Error(msg) {}
};

struct EmptyCloud : Error {
  explicit EmptyCloud(const std::string& msg = "point cloud is empty") : Error(msg) {}
};

struct UnknownKind : Error {
  explicit UnknownKind(const std::string& msg) : Error(msg) {}
};

struct BadParams : Error {
  explicit BadParams(const std::string& msg) : Error(msg) {}
};

struct OutOfRange : Error {
  explicit OutOfRange(const std::string& msg) : Error(msg) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct SingularSystem : Error {
  explicit SingularSystem(const std::string& msg) : Error(msg) {}
};

struct NoOverlap : Error {
  explicit NoOverlap(const std::string& msg = "no jointly valid pixels") : Error(msg) {}
};

struct NoVisibleTerrain : Error {
  explicit NoVisibleTerrain(const std::string& msg = "no terrain visible from camera") : Error(msg) {}
};

struct BadSpec : Error {
  explicit BadSpec(const std::string& msg) : Error(msg) {}
};

struct MissingInput : Error {
  explicit MissingInput(const std::string& msg) : Error(msg) {}
};

struct LayoutError : Error {
  explicit LayoutError(const std::string& msg) : Error(msg) {}
};

}  // namespace mars
