#pragma once

#include <stdexcept>
#include <string>

namespace f2f {

/// Runtime failure inside the estimation stack.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A LiDAR frame that cannot be processed; the caller drops it and moves on.
class FrameSkipped : public Error {
 public:
  using Error::Error;
};

}  // namespace f2f
