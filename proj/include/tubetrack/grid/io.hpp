#pragma once

#include <filesystem>
#include <variant>

#include "tubetrack/errors.hpp"
#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

// NRRD subset:
//   NRRD0004
//   type: float | uchar
//   dimension: 3
//   sizes: <i> <j> <k>
//   spacings: <s> <s> <s>
//   encoding: raw
//   endian: little
//   <blank line>
//   raw little-endian payload, k fastest.

class NrrdHeaderError : public DataError {
 public:
  using DataError::DataError;
};
class NrrdSizeMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class NrrdUnsupportedEncodingError : public DataError {
 public:
  using DataError::DataError;
};
class NrrdUnsupportedTypeError : public DataError {
 public:
  using DataError::DataError;
};

void save_volume(const RealVolume& v, const std::filesystem::path& path);
void save_volume(const MaskVolume& v, const std::filesystem::path& path);

using AnyVolume = std::variant<RealVolume, MaskVolume>;
AnyVolume load_volume(const std::filesystem::path& path);

// Typed loaders; throw NrrdUnsupportedTypeError on element-kind mismatch.
RealVolume load_real_volume(const std::filesystem::path& path);
MaskVolume load_mask_volume(const std::filesystem::path& path);

}  // namespace tubetrack
