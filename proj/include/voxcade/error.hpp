#pragma once

#include <stdexcept>
#include <string>

namespace voxcade {

// Every failure mode the library can signal. The CLI maps these onto
// process exit codes (input errors -> 2, I/O errors -> 3).
enum class errc {
  // mesh / voxelization
  malformed_header,
  count_mismatch,
  non_finite_coordinate,
  degenerate_mesh,
  empty_mesh,
  resolution_out_of_range,
  not_divisible,
  // distance fields
  empty_feature_set,
  degenerate_grid,
  // datasets
  bad_magic,
  truncated,
  not_binary,
  degenerate_image,
  bad_thickness,
  missing_split,
  no_meshes,
  checksum_mismatch,
  // network engine
  shape_mismatch,
  batch_too_small,
  unsupported_resolution,
  trunk_shape_mismatch,
  frozen_name_unknown,
  variant_mismatch,
  bad_checkpoint,
  // cascade
  invalid_confidence,
  invalid_rates,
  empty_grid,
  empty_dataset,
  // misc
  io_failure,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::malformed_header: return "MalformedHeader";
    case errc::count_mismatch: return "CountMismatch";
    case errc::non_finite_coordinate: return "NonFiniteCoordinate";
    case errc::degenerate_mesh: return "DegenerateMesh";
    case errc::empty_mesh: return "EmptyMesh";
    case errc::resolution_out_of_range: return "ResolutionOutOfRange";
    case errc::not_divisible: return "NotDivisible";
    case errc::empty_feature_set: return "EmptyFeatureSet";
    case errc::degenerate_grid: return "DegenerateGrid";
    case errc::bad_magic: return "BadMagic";
    case errc::truncated: return "Truncated";
    case errc::not_binary: return "NotBinary";
    case errc::degenerate_image: return "DegenerateImage";
    case errc::bad_thickness: return "BadThickness";
    case errc::missing_split: return "MissingSplit";
    case errc::no_meshes: return "NoMeshes";
    case errc::checksum_mismatch: return "ChecksumMismatch";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::batch_too_small: return "BatchTooSmall";
    case errc::unsupported_resolution: return "UnsupportedResolution";
    case errc::trunk_shape_mismatch: return "TrunkShapeMismatch";
    case errc::frozen_name_unknown: return "FrozenNameUnknown";
    case errc::variant_mismatch: return "VariantMismatch";
    case errc::bad_checkpoint: return "BadCheckpoint";
    case errc::invalid_confidence: return "InvalidConfidence";
    case errc::invalid_rates: return "InvalidRates";
    case errc::empty_grid: return "EmptyGrid";
    case errc::empty_dataset: return "EmptyDataset";
    case errc::io_failure: return "IoFailure";
  }
  return "UnknownError";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace voxcade
