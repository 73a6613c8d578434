#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace conecraft {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Polyhedra / projector
struct DimensionMismatch : Error { using Error::Error; };
struct ZeroRow : Error { using Error::Error; };
struct InvalidGrid : Error { using Error::Error; };

// Tensor engine
struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateBatch : Error { using Error::Error; };

// File formats
struct ParseError : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct CheckpointCorrupt : Error { using Error::Error; };

// Config
struct ConfigError : Error { using Error::Error; };

}  // namespace conecraft
