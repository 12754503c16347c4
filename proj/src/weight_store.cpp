#include "weightscan/weight_store.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "weightscan/error.hpp"
#include "weightscan/stats.hpp"

namespace weightscan {

namespace {

constexpr char kMagic[4] = {'M', 'W', 'S', '1'};

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

void append_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void spew(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace

void ModelWeights::validate() const {
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) {
      fail(ErrorKind::duplicate_tensor, "duplicate tensor name '" + t.name + "'");
    }
    for (std::size_t d : t.shape) {
      if (d == 0) {
        fail(ErrorKind::shape_mismatch,
             "tensor '" + t.name + "' has a zero dimension");
      }
    }
    if (t.data.size() != t.element_count()) {
      fail(ErrorKind::shape_mismatch,
           "tensor '" + t.name + "' data length does not match its shape");
    }
    for (double v : t.data) {
      if (!std::isfinite(v)) {
        fail(ErrorKind::non_finite,
             "tensor '" + t.name + "' contains a non-finite value");
      }
    }
  }
}

ModelWeights read_model(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 12) {
    fail(ErrorKind::truncated, path.string() + ": shorter than fixed preamble");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::bad_magic, path.string() + ": magic bytes are not MWS1");
  }
  const std::uint64_t header_len = read_u64_le(raw + 4);
  if (12 + header_len > bytes.size()) {
    fail(ErrorKind::truncated, path.string() + ": header length exceeds file");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12,
                                   bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::bad_header, path.string() + ": " + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") ||
      !header["tensors"].is_array() || !header.contains("metadata") ||
      !header["metadata"].is_object()) {
    fail(ErrorKind::bad_header, path.string() + ": header missing tensors/metadata");
  }

  ModelWeights model;
  for (auto& [key, value] : header["metadata"].items()) {
    if (!value.is_string()) {
      fail(ErrorKind::bad_header, path.string() + ": metadata values must be strings");
    }
    model.metadata[key] = value.get<std::string>();
  }

  const std::size_t data_start = 12 + header_len;
  const std::size_t data_size = bytes.size() - data_start;
  std::uint64_t expected_offset = 0;
  std::set<std::string> names;

  for (const auto& entry : header["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry.contains("dtype") ||
        !entry.contains("shape") || !entry.contains("offset") ||
        !entry.contains("nbytes") || !entry["name"].is_string() ||
        !entry["shape"].is_array()) {
      fail(ErrorKind::bad_header, path.string() + ": malformed tensor entry");
    }
    WeightTensor t;
    t.name = entry["name"].get<std::string>();
    if (!names.insert(t.name).second) {
      fail(ErrorKind::duplicate_tensor,
           path.string() + ": duplicate tensor '" + t.name + "'");
    }
    if (entry["dtype"].get<std::string>() != "f32") {
      fail(ErrorKind::bad_header,
           path.string() + ": unsupported dtype for '" + t.name + "'");
    }
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
        fail(ErrorKind::bad_header,
             path.string() + ": non-positive dimension in '" + t.name + "'");
      }
      t.shape.push_back(d.get<std::size_t>());
    }
    const std::uint64_t offset = entry["offset"].get<std::uint64_t>();
    const std::uint64_t nbytes = entry["nbytes"].get<std::uint64_t>();
    if (nbytes != 4 * t.element_count()) {
      fail(ErrorKind::bad_header,
           path.string() + ": nbytes disagrees with shape for '" + t.name + "'");
    }
    if (offset != expected_offset) {
      fail(ErrorKind::bad_layout,
           path.string() + ": tensor '" + t.name +
               "' is not contiguous with the previous tensor");
    }
    expected_offset = offset + nbytes;
    if (offset + nbytes > data_size) {
      fail(ErrorKind::truncated,
           path.string() + ": data region ends before tensor '" + t.name + "'");
    }

    const unsigned char* src = raw + data_start + offset;
    t.data.resize(t.element_count());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const float f = read_f32_le(src + 4 * i);
      if (!std::isfinite(f)) {
        fail(ErrorKind::non_finite,
             path.string() + ": non-finite value in tensor '" + t.name + "'");
      }
      t.data[i] = static_cast<double>(f);
    }
    model.tensors.push_back(std::move(t));
  }

  if (expected_offset != data_size) {
    fail(ErrorKind::bad_layout,
         path.string() + ": data region larger than the tensor table declares");
  }
  return model;
}

void write_model(const std::filesystem::path& path, const ModelWeights& model) {
  model.validate();

  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : model.tensors) {
    const std::uint64_t nbytes = 4 * t.element_count();
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["dtype"] = "f32";
    entry["shape"] = t.shape;
    entry["offset"] = offset;
    entry["nbytes"] = nbytes;
    header["tensors"].push_back(std::move(entry));
    offset += nbytes;
  }
  header["metadata"] = model.metadata;

  const std::string header_text = header.dump();
  std::string bytes;
  bytes.reserve(12 + header_text.size() + offset);
  bytes.append(kMagic, 4);
  append_u64_le(bytes, header_text.size());
  bytes += header_text;
  for (const auto& t : model.tensors) {
    for (double v : t.data) {
      append_f32_le(bytes, static_cast<float>(v));
    }
  }
  spew(path, bytes);
}

Manifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("models") || !doc["models"].is_array()) {
    fail(ErrorKind::malformed, path.string() + ": missing models array");
  }

  Manifest manifest;
  std::set<std::string> seen;
  for (const auto& entry : doc["models"]) {
    if (!entry.is_object() || !entry.contains("id") || !entry.contains("path") ||
        !entry.contains("architecture")) {
      fail(ErrorKind::malformed, path.string() + ": malformed model entry");
    }
    ManifestEntry e;
    e.id = entry["id"].get<std::string>();
    e.path = entry["path"].get<std::string>();
    e.architecture = entry["architecture"].get<std::string>();
    if (!seen.insert(e.id).second) {
      fail(ErrorKind::duplicate_id, path.string() + ": duplicate id '" + e.id + "'");
    }
    if (entry.contains("label")) {
      if (!entry["label"].is_number_integer()) {
        fail(ErrorKind::bad_label,
             path.string() + ": label of '" + e.id + "' is not an integer");
      }
      const int label = entry["label"].get<int>();
      if (label != 0 && label != 1) {
        fail(ErrorKind::bad_label,
             path.string() + ": label of '" + e.id + "' is outside {0,1}");
      }
      e.label = label;
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::set<std::string> seen;
  nlohmann::json doc;
  doc["models"] = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.id).second) {
      fail(ErrorKind::duplicate_id, "duplicate id '" + e.id + "'");
    }
    nlohmann::json entry;
    entry["id"] = e.id;
    entry["path"] = e.path;
    entry["architecture"] = e.architecture;
    if (e.label) {
      if (*e.label != 0 && *e.label != 1) {
        fail(ErrorKind::bad_label, "label of '" + e.id + "' is outside {0,1}");
      }
      entry["label"] = *e.label;
    }
    doc["models"].push_back(std::move(entry));
  }
  spew(path, doc.dump() + "\n");
}

ArchitectureSignature common_architecture(std::span<const ModelWeights> models) {
  if (models.empty()) {
    fail(ErrorKind::bad_argument, "common_architecture of an empty model set");
  }
  ArchitectureSignature sig;
  for (const auto& t : models.front().tensors) {
    bool shared = true;
    for (std::size_t m = 1; m < models.size() && shared; ++m) {
      const WeightTensor* other = models[m].find(t.name);
      shared = other != nullptr && other->shape == t.shape;
    }
    if (shared) sig.tensor_specs.push_back({t.name, t.shape});
  }
  if (sig.tensor_specs.empty()) {
    fail(ErrorKind::empty_signature, "models share no (name, shape) pair");
  }
  return sig;
}

std::vector<double> frobenius_features(const ModelWeights& model) {
  std::vector<double> norms;
  norms.reserve(model.tensors.size());
  for (const auto& t : model.tensors) {
    norms.push_back(stats::frobenius_norm(t.data));
  }
  return norms;
}

std::vector<ModelWeights> load_models(const Manifest& manifest,
                                      const std::filesystem::path& base_dir) {
  std::vector<ModelWeights> models;
  models.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base_dir / p;
    models.push_back(read_model(p));
  }
  return models;
}

std::vector<int> manifest_labels(const Manifest& manifest) {
  std::vector<int> labels;
  labels.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    if (!e.label) {
      fail(ErrorKind::unlabeled, "model '" + e.id + "' has no label");
    }
    labels.push_back(*e.label);
  }
  return labels;
}

std::vector<std::string> manifest_ids(const Manifest& manifest) {
  std::vector<std::string> ids;
  ids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) ids.push_back(e.id);
  return ids;
}

}  // namespace weightscan
