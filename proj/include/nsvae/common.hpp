// SPDX-License-Identifier: Apache-2.0
#ifndef NSVAE_COMMON_HPP
#define NSVAE_COMMON_HPP

#include <stdexcept>
#include <string>

namespace nsvae {

// Bad caller-supplied data (shape mismatch, empty signal, invalid wav, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unparseable or inconsistent configuration (unknown keys, bad values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace nsvae

#endif
