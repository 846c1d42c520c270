#include "wsonar/error.hpp"

namespace wsonar {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::invalid_spec: return "invalid-spec";
    case Errc::length_mismatch: return "length-mismatch";
    case Errc::not_frame_aligned: return "not-frame-aligned";
    case Errc::crop_out_of_range: return "crop-out-of-range";
    case Errc::wrong_kind: return "wrong-kind";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::invalid_scene: return "invalid-scene";
    case Errc::invalid_pose: return "invalid-pose";
    case Errc::degenerate_palm: return "degenerate-palm";
    case Errc::unnormalized_input: return "unnormalized-input";
    case Errc::zero_length_bone: return "zero-length-bone";
    case Errc::zero_vector: return "zero-vector";
    case Errc::empty_input: return "empty-input";
    case Errc::no_impulse_found: return "no-impulse-found";
    case Errc::label_gap: return "label-gap";
    case Errc::invalid_level: return "invalid-level";
    case Errc::unknown_participant: return "unknown-participant";
    case Errc::empty_data: return "empty-data";
    case Errc::head_mismatch: return "head-mismatch";
    case Errc::not_fitted: return "not-fitted";
    case Errc::endpoint_unreachable: return "endpoint-unreachable";
    case Errc::protocol_error: return "protocol-error";
    case Errc::timeout: return "timeout";
    case Errc::task_mismatch: return "task-mismatch";
    case Errc::io: return "io";
    case Errc::format: return "format";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace wsonar
