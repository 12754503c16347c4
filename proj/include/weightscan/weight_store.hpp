#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "weightscan/tensor.hpp"

namespace weightscan {

// MWS container, bit-exact:
//   bytes 0..3    ASCII "MWS1"
//   bytes 4..11   unsigned 64-bit little-endian header length H
//   bytes 12..12+H UTF-8 JSON header:
//     {"tensors":[{"name":str,"dtype":"f32","shape":[ints],
//                  "offset":u64,"nbytes":u64},...],
//      "metadata":{str:str}}
//   data region starts at byte 12+H; offsets are relative to it, ascending
//   and contiguous (no padding, no overlap); payload is raw little-endian
//   f32, row-major.

/// Reads a model; rejects malformed magic/header, gapped or overlapping
/// data layouts, truncated files, and non-finite values, each with its own
/// ErrorKind.
ModelWeights read_model(const std::filesystem::path& path);

/// Canonical encoding: tensors laid out contiguously in sequence order.
/// write_model(read_model(f)) reproduces f byte for byte when f itself is
/// canonical.
void write_model(const std::filesystem::path& path, const ModelWeights& model);

/// Manifest document: {"models":[{"id":str,"path":str,"architecture":str,
/// "label":0|1 (optional)}]}. Entry order is preserved.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// (name, shape) pairs present with identical shape in every model, in the
/// tensor order of the first model. Throws when the intersection is empty.
ArchitectureSignature common_architecture(std::span<const ModelWeights> models);

/// One Frobenius norm per tensor, in tensor order.
std::vector<double> frobenius_features(const ModelWeights& model);

/// Loads every manifest entry; relative paths resolve against base_dir.
std::vector<ModelWeights> load_models(const Manifest& manifest,
                                      const std::filesystem::path& base_dir);

/// Labels of every entry; throws ErrorKind::unlabeled if any is absent.
std::vector<int> manifest_labels(const Manifest& manifest);

std::vector<std::string> manifest_ids(const Manifest& manifest);

}  // namespace weightscan
