#pragma once

// Named-tensor archive ("NTAR1").
//
// Layout: the 5 magic bytes "NTAR1", a little-endian uint64 header length,
// a UTF-8 JSON header mapping each name to
//   {"dtype": "f32"|"f64", "shape": [...], "offset": N, "byte_length": N}
// and then the raw little-endian payload. Offsets are relative to the first
// payload byte. f64 entries round-trip bit-exactly.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inject/tensor.hpp"

namespace inject {

enum class DType { f32, f64 };

struct ArchiveEntry {
  DType dtype = DType::f64;
  Shape shape;
  std::vector<double> values;
};

using NamedTensorMap = std::map<std::string, ArchiveEntry>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_archive(const std::filesystem::path& path, const NamedTensorMap& entries);
NamedTensorMap read_archive(const std::filesystem::path& path);

/// Saves parameters as f64 entries under their names.
void save_named_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& params);

struct LoadReport {
  std::vector<std::string> assigned;
  /// Model parameters with no archive entry; they keep their initialization.
  std::vector<std::string> missing;
  /// Archive entries under the prefix that matched no parameter.
  std::vector<std::string> unused;
};

/// Copies archive entries named `prefix + parameter name` into the
/// parameters. A shape mismatch throws a DimensionError naming both shapes.
LoadReport load_named_tensors(const std::filesystem::path& path, const std::string& prefix,
                              const std::vector<NamedTensor>& params);
LoadReport assign_named_tensors(const NamedTensorMap& archive, const std::string& prefix,
                                const std::vector<NamedTensor>& params);

}  // namespace inject
