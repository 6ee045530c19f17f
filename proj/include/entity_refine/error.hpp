#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace entity_refine {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Raster sizes are zero, negative, or disagree between operands.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// Run lengths do not describe a canonical mask of the declared size.
class CorruptMaskError : public Error {
  public:
    using Error::Error;
};

// Operation needs at least one foreground pixel.
class EmptyMaskError : public Error {
  public:
    using Error::Error;
};

// Input violates a documented invariant (scene overlap, level ordering, config range, ...).
class ValidationError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class BackendError : public Error {
  public:
    explicit BackendError(const std::string& what, std::optional<int> prompt_id = std::nullopt)
        : Error(prompt_id ? what + " (prompt " + std::to_string(*prompt_id) + ")" : what),
          prompt_id_(prompt_id) {}

    std::optional<int> prompt_id() const { return prompt_id_; }

  private:
    std::optional<int> prompt_id_;
};

} // namespace entity_refine
