#pragma once

#include <stdexcept>
#include <string>

namespace bitsplit {

/// Malformed external input: raw files, descriptors, containers, weight files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bitstream ended early or contains a value the encoder could not have produced.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A requested feature cannot be represented exactly (e.g. an irrational scan slope).
class Unsupported : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bitsplit
