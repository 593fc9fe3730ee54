#include "steerkit/error.hpp"

namespace steerkit {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::usage: return "Usage";
    case Errc::io: return "Io";
    case Errc::parse: return "Parse";
    case Errc::validation: return "Validation";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::count_mismatch: return "CountMismatch";
    case Errc::style_not_found: return "StyleNotFound";
    case Errc::overlap_empty: return "OverlapEmpty";
    case Errc::no_selectable_token: return "NoSelectableToken";
    case Errc::invalid_span: return "InvalidSpan";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::encoder_mismatch: return "EncoderMismatch";
    case Errc::batch_too_large: return "BatchTooLarge";
    case Errc::unknown_ref: return "UnknownRef";
    case Errc::transport: return "Transport";
    case Errc::backend_status: return "BackendStatus";
    case Errc::not_found: return "NotFound";
    case Errc::degenerate_direction: return "DegenerateDirection";
    case Errc::non_positive_projection: return "NonPositiveProjection";
  }
  return "Unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::usage:
      return 2;
    case Errc::transport:
    case Errc::backend_status:
    case Errc::encoder_mismatch:
    case Errc::batch_too_large:
    case Errc::unknown_ref:
      return 3;
    case Errc::degenerate_direction:
    case Errc::non_positive_projection:
      return 5;
    default:
      return 4;
  }
}

}  // namespace steerkit
