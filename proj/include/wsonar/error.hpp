#pragma once

#include <stdexcept>
#include <string>

namespace wsonar {

// Every failure the library reports maps to one of these codes; the CLI turns
// them into a nonzero exit status.
enum class Errc {
  invalid_config,
  invalid_spec,
  length_mismatch,
  not_frame_aligned,
  crop_out_of_range,
  wrong_kind,
  shape_mismatch,
  invalid_scene,
  invalid_pose,
  degenerate_palm,
  unnormalized_input,
  zero_length_bone,
  zero_vector,
  empty_input,
  no_impulse_found,
  label_gap,
  invalid_level,
  unknown_participant,
  empty_data,
  head_mismatch,
  not_fitted,
  endpoint_unreachable,
  protocol_error,
  timeout,
  task_mismatch,
  io,
  format,
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

inline void require(bool cond, Errc code, const char* what) {
  if (!cond) fail(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace wsonar
