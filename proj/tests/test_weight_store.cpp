#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "support/oracles.hpp"
#include "weightscan/error.hpp"
#include "weightscan/rng.hpp"
#include "weightscan/stats.hpp"
#include "weightscan/weight_store.hpp"

using namespace weightscan;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

/// Hand-built MWS bytes, so layout can be deliberately corrupted.
std::string raw_mws(const std::string& header, const std::string& data) {
  std::string bytes = "MWS1";
  const std::uint64_t h = header.size();
  for (int i = 0; i < 8; ++i) {
    bytes.push_back(static_cast<char>((h >> (8 * i)) & 0xff));
  }
  bytes += header;
  bytes += data;
  return bytes;
}

std::string f32_bytes(std::initializer_list<float> values) {
  std::string out;
  for (float f : values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) {
      out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string header_one_tensor(std::uint64_t offset, std::uint64_t nbytes) {
  nlohmann::json j;
  j["tensors"] = {{{"name", "w"},
                   {"dtype", "f32"},
                   {"shape", {2, 2}},
                   {"offset", offset},
                   {"nbytes", nbytes}}};
  j["metadata"] = nlohmann::json::object();
  return j.dump();
}

}  // namespace

TEST_SUITE_BEGIN("weight_store");

TEST_CASE("one tensor survives a round trip") {
  oracles::TempDir dir("mws");
  ModelWeights model;
  model.tensors.push_back({"w", {2, 2}, {1.0, 2.0, 3.0, 4.0}});
  model.metadata["architecture"] = "tiny";

  const auto path = dir.path() / "m.mws";
  write_model(path, model);
  const ModelWeights loaded = read_model(path);
  REQUIRE(loaded.tensors.size() == 1);
  CHECK(loaded.tensors[0].name == "w");
  CHECK(loaded.tensors[0].shape == std::vector<std::size_t>{2, 2});
  CHECK(loaded.tensors[0].data == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(loaded.metadata.at("architecture") == "tiny");
}

TEST_CASE("empty tensor list is a valid file") {
  oracles::TempDir dir("mws");
  ModelWeights model;
  const auto path = dir.path() / "empty.mws";
  write_model(path, model);
  CHECK(read_model(path).tensors.empty());
}

TEST_CASE("data region length is 4 bytes per element") {
  oracles::TempDir dir("mws");
  ModelWeights model;
  model.tensors.push_back({"a", {3}, {1, 2, 3}});
  model.tensors.push_back({"b", {2, 2}, {4, 5, 6, 7}});
  const auto path = dir.path() / "two.mws";
  write_model(path, model);

  const std::string bytes = oracles::read_file_bytes(path);
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, 8);
  CHECK(bytes.size() - 12 - header_len == 4 * 7);
}

TEST_CASE("write(read(f)) is byte-identical for canonical files") {
  oracles::TempDir dir("mws");
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelWeights model = oracles::random_model(rng);
    const auto first = dir.path() / "a.mws";
    const auto second = dir.path() / "b.mws";
    write_model(first, model);
    write_model(second, read_model(first));
    CHECK(oracles::read_file_bytes(first) == oracles::read_file_bytes(second));
  }
}

TEST_CASE("each corruption has its own error kind") {
  oracles::TempDir dir("mws");
  const auto path = dir.path() / "bad.mws";
  const std::string good_data = f32_bytes({1.f, 2.f, 3.f, 4.f});

  SUBCASE("wrong magic") {
    write_bytes(path, "XWS1" + raw_mws(header_one_tensor(0, 16), good_data).substr(4));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::bad_magic);
  }
  SUBCASE("file shorter than preamble") {
    write_bytes(path, "MWS1\x01");
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::truncated);
  }
  SUBCASE("header is not JSON") {
    write_bytes(path, raw_mws("{not json", good_data));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::bad_header);
  }
  SUBCASE("header length overruns the file") {
    std::string bytes = raw_mws(header_one_tensor(0, 16), good_data);
    bytes[4] = static_cast<char>(0xff);  // absurd header length
    bytes[5] = static_cast<char>(0xff);
    write_bytes(path, bytes);
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::truncated);
  }
  SUBCASE("gapped offsets") {
    write_bytes(path, raw_mws(header_one_tensor(4, 16),
                              f32_bytes({0.f}) + good_data));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::bad_layout);
  }
  SUBCASE("trailing bytes beyond the tensor table") {
    write_bytes(path, raw_mws(header_one_tensor(0, 16), good_data + "xx"));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::bad_layout);
  }
  SUBCASE("truncated data region") {
    write_bytes(path, raw_mws(header_one_tensor(0, 16), good_data.substr(0, 8)));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::truncated);
  }
  SUBCASE("non-finite value") {
    write_bytes(path, raw_mws(header_one_tensor(0, 16),
                              f32_bytes({1.f, std::numeric_limits<float>::quiet_NaN(),
                                         3.f, 4.f})));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::non_finite);
  }
  SUBCASE("duplicate tensor name") {
    nlohmann::json j;
    j["tensors"] = {{{"name", "w"}, {"dtype", "f32"}, {"shape", {1}},
                     {"offset", 0}, {"nbytes", 4}},
                    {{"name", "w"}, {"dtype", "f32"}, {"shape", {1}},
                     {"offset", 4}, {"nbytes", 4}}};
    j["metadata"] = nlohmann::json::object();
    write_bytes(path, raw_mws(j.dump(), f32_bytes({1.f, 2.f})));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::duplicate_tensor);
  }
  SUBCASE("nbytes disagrees with shape") {
    write_bytes(path, raw_mws(header_one_tensor(0, 12), good_data));
    CHECK(kind_of([&] { read_model(path); }) == ErrorKind::bad_header);
  }
}

TEST_CASE("manifest round trip and validation") {
  oracles::TempDir dir("manifest");
  const auto path = dir.path() / "manifest.json";

  SUBCASE("two labeled entries") {
    Manifest m;
    m.entries.push_back({"a", "a.mws", "fc3", 0});
    m.entries.push_back({"b", "b.mws", "fc3", 1});
    write_manifest(path, m);
    CHECK(read_manifest(path) == m);
  }
  SUBCASE("label may be absent") {
    Manifest m;
    m.entries.push_back({"a", "a.mws", "fc3", std::nullopt});
    write_manifest(path, m);
    const Manifest loaded = read_manifest(path);
    CHECK(!loaded.entries[0].label.has_value());
    CHECK_THROWS_AS(manifest_labels(loaded), Error);
  }
  SUBCASE("duplicate id rejected") {
    std::ofstream(path) << R"({"models":[
      {"id":"a","path":"a.mws","architecture":"fc3","label":0},
      {"id":"a","path":"b.mws","architecture":"fc3","label":1}]})";
    CHECK(kind_of([&] { read_manifest(path); }) == ErrorKind::duplicate_id);
  }
  SUBCASE("label outside {0,1} rejected") {
    std::ofstream(path) << R"({"models":[
      {"id":"a","path":"a.mws","architecture":"fc3","label":2}]})";
    CHECK(kind_of([&] { read_manifest(path); }) == ErrorKind::bad_label);
  }
  SUBCASE("200 generated entries round-trip in order") {
    Manifest m;
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      ManifestEntry e;
      e.id = "model_" + std::to_string(i);
      e.path = e.id + ".mws";
      e.architecture = rng.below(2) == 0 ? "fc3" : "fc5";
      if (rng.below(3) != 0) e.label = static_cast<int>(rng.below(2));
      m.entries.push_back(std::move(e));
    }
    write_manifest(path, m);
    CHECK(read_manifest(path) == m);
  }
}

TEST_CASE("common architecture follows the shared-tensor rule") {
  auto tensor = [](const std::string& name, std::vector<std::size_t> shape) {
    WeightTensor t;
    t.name = name;
    t.shape = std::move(shape);
    t.data.assign(t.element_count(), 0.5);
    return t;
  };

  SUBCASE("differently sized heads are excluded") {
    ModelWeights a, b;
    a.tensors = {tensor("fc1.weight", {4, 3}), tensor("head.weight", {5, 4})};
    b.tensors = {tensor("fc1.weight", {4, 3}), tensor("head.weight", {7, 4})};
    const ArchitectureSignature sig = common_architecture(std::vector{a, b});
    REQUIRE(sig.tensor_specs.size() == 1);
    CHECK(sig.tensor_specs[0].name == "fc1.weight");
  }
  SUBCASE("identical architectures keep the full list") {
    ModelWeights a;
    a.tensors = {tensor("x", {2}), tensor("y", {3, 3})};
    const ArchitectureSignature sig = common_architecture(std::vector{a, a});
    CHECK(sig.tensor_specs.size() == 2);
  }
  SUBCASE("no shared tensor is an error") {
    ModelWeights a, b;
    a.tensors = {tensor("x", {2})};
    b.tensors = {tensor("x", {3})};
    CHECK(kind_of([&] { common_architecture(std::vector{a, b}); }) ==
          ErrorKind::empty_signature);
  }
  SUBCASE("matches a brute-force intersection on random models") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<ModelWeights> models;
      for (int m = 0; m < 10; ++m) {
        ModelWeights model;
        for (int t = 0; t < 6; ++t) {
          model.tensors.push_back(tensor("t" + std::to_string(t), {3, 2}));
        }
        // resize one random tensor so it drops from the signature
        const std::size_t victim = rng.below(6);
        model.tensors[victim] =
            tensor(model.tensors[victim].name, {1 + rng.below(4)});
        models.push_back(std::move(model));
      }
      // brute force: a (name, shape) pair survives iff present everywhere
      std::set<std::string> expected;
      for (const auto& t : models[0].tensors) {
        bool everywhere = true;
        for (const auto& m : models) {
          const WeightTensor* other = m.find(t.name);
          if (other == nullptr || other->shape != t.shape) {
            everywhere = false;
            break;
          }
        }
        if (everywhere) expected.insert(t.name);
      }
      if (expected.empty()) continue;
      const ArchitectureSignature sig = common_architecture(models);
      std::set<std::string> got;
      for (const auto& s : sig.tensor_specs) got.insert(s.name);
      CHECK(got == expected);

      // membership is insensitive to the order of the input list
      std::vector<ModelWeights> reversed(models.rbegin(), models.rend());
      const ArchitectureSignature rsig = common_architecture(reversed);
      std::set<std::string> rgot;
      for (const auto& s : rsig.tensor_specs) rgot.insert(s.name);
      CHECK(rgot == got);
    }
  }
}

TEST_CASE("frobenius features") {
  ModelWeights model;
  model.tensors.push_back({"a", {2}, {3.0, 4.0}});
  model.tensors.push_back({"z", {3}, {0.0, 0.0, 0.0}});
  const std::vector<double> norms = frobenius_features(model);
  REQUIRE(norms.size() == 2);
  CHECK(norms[0] == 5.0);
  CHECK(norms[1] == 0.0);

  SUBCASE("agrees with a plain summation oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      WeightTensor t;
      t.name = "r";
      t.shape = {1 + rng.below(64)};
      t.data.resize(t.element_count());
      for (double& v : t.data) v = rng.uniform(-3.0, 3.0);
      ModelWeights m;
      m.tensors.push_back(t);
      CHECK(frobenius_features(m)[0] ==
            doctest::Approx(oracles::plain_frobenius(t.data)).epsilon(1e-12));
    }
  }
  SUBCASE("exactly invariant under element permutation") {
    Rng rng(8);
    WeightTensor t;
    t.name = "p";
    t.shape = {40};
    t.data.resize(40);
    for (double& v : t.data) v = rng.uniform(-3.0, 3.0);
    ModelWeights m1;
    m1.tensors.push_back(t);
    rng.shuffle(t.data);
    ModelWeights m2;
    m2.tensors.push_back(t);
    CHECK(frobenius_features(m1)[0] == frobenius_features(m2)[0]);
  }
}

TEST_SUITE_END();
