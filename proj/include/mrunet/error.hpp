#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mrunet {

/// Base class for every error raised by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents that are zero or otherwise unusable when creating a tensor.
class invalid_shape_error : public error {
 public:
  using error::error;
};

/// Operand shapes that do not fit together.
class shape_error : public error {
 public:
  using error::error;
};

/// A NaN or Inf produced inside an op. The op is aborted, nothing is returned.
class numeric_error : public error {
 public:
  using error::error;
};

/// backward() called on something that is not a one-element tensor.
class invalid_root_error : public error {
 public:
  using error::error;
};

/// Batch-norm population of a single element in training mode.
class degenerate_batch_error : public error {
 public:
  using error::error;
};

class invalid_width_error : public error {
 public:
  using error::error;
};

class invalid_level_error : public error {
 public:
  using error::error;
};

class unsupported_rank_error : public error {
 public:
  using error::error;
};

class invalid_batch_error : public error {
 public:
  using error::error;
};

class invalid_split_error : public error {
 public:
  using error::error;
};

/// Value outside the admissible range of a function (e.g. probabilities > 1).
class domain_error : public error {
 public:
  using error::error;
};

/// Malformed file contents (TNSR, netpbm, checkpoint).
class format_error : public error {
 public:
  using error::error;
};

/// Image and mask that do not belong together.
class pairing_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

class usage_error : public error {
 public:
  using error::error;
};

/// A numeric failure during training, tagged with the epoch it happened in.
class training_aborted : public numeric_error {
 public:
  training_aborted(std::size_t epoch, const std::string& what)
      : numeric_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace mrunet
