#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steerkit {

enum class Errc {
  usage,
  io,
  parse,
  validation,
  empty_dataset,
  count_mismatch,
  style_not_found,
  overlap_empty,
  no_selectable_token,
  invalid_span,
  dim_mismatch,
  encoder_mismatch,
  batch_too_large,
  unknown_ref,
  transport,
  backend_status,
  not_found,
  degenerate_direction,
  non_positive_projection,
};

std::string_view errc_name(Errc code);

// Process exit code for an error category: 2 usage, 3 backend, 4 validation,
// 5 degenerate math.
int exit_code_for(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

  // Transport failures and 5xx replies may succeed on a second attempt.
  bool retriable() const noexcept { return retriable_; }
  Error& set_retriable(bool value) noexcept {
    retriable_ = value;
    return *this;
  }

 private:
  Errc code_;
  bool retriable_ = false;
};

}  // namespace steerkit
