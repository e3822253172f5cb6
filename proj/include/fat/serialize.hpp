#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fat/dataset.hpp"
#include "fat/model.hpp"
#include "fat/tensor.hpp"

namespace fat {

// Binary artifacts: model checkpoints ("FATCKPT1") and dataset bundles
// ("FATDATA1"). Both are little-endian streams ending in an FNV-1a hash of
// everything before it, so corruption is detected on load.

constexpr uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t h = kFnvOffset) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= kFnvPrime;
  }
  return h;
}

namespace bytesio {

struct Writer {
  std::vector<uint8_t> bytes;

  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back((uint8_t)(v >> (8 * i)));
  }
  void put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back((uint8_t)(v >> (8 * i)));
  }
  void put_f32(float v) { put_u32(std::bit_cast<uint32_t>(v)); }
  void put_string(const std::string& s) {
    put_u32((uint32_t)s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_magic(const char (&m)[9]) { bytes.insert(bytes.end(), m, m + 8); }
  void seal_with_hash() { put_u64(fnv1a(bytes.data(), bytes.size())); }
};

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t at = 0;
  std::string what;

  Reader(const std::vector<uint8_t>& b, std::string what_) : bytes(b), what(std::move(what_)) {}

  void need(size_t n) const {
    if (at + n > bytes.size()) throw std::runtime_error(what + ": file truncated");
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)bytes[at + (size_t)i] << (8 * i);
    at += 4;
    return v;
  }
  uint64_t get_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)bytes[at + (size_t)i] << (8 * i);
    at += 8;
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get_u32()); }
  std::string get_string() {
    const uint32_t n = get_u32();
    need(n);
    std::string s((const char*)bytes.data() + at, n);
    at += n;
    return s;
  }
  void expect_magic(const char (&m)[9]) {
    need(8);
    if (std::memcmp(bytes.data() + at, m, 8) != 0)
      throw std::runtime_error(what + ": bad magic bytes");
    at += 8;
  }
};

inline std::vector<uint8_t> read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error(what + ": cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes,
                       const std::string& what) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error(what + ": cannot write " + path);
  out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  out.flush();
  if (!out.good()) throw std::runtime_error(what + ": write to " + path + " failed");
}

/// Strips and verifies the trailing hash, leaving the reader on the payload.
inline void check_sealed(Reader& r) {
  if (r.bytes.size() < 16) throw std::runtime_error(r.what + ": file truncated");
  const size_t body = r.bytes.size() - 8;
  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= (uint64_t)r.bytes[body + (size_t)i] << (8 * i);
  if (fnv1a(r.bytes.data(), body) != stored)
    throw std::runtime_error(r.what + ": integrity hash mismatch");
}

}  // namespace bytesio

inline void put_tensor(bytesio::Writer& w, const std::string& name, const Tensor& t) {
  w.put_string(name);
  w.put_u32((uint32_t)t.rank());
  for (int d : t.shape) w.put_u32((uint32_t)d);
  for (float v : t.data) w.put_f32(v);
}

inline Tensor get_tensor(bytesio::Reader& r, const std::string& expect_name) {
  const std::string name = r.get_string();
  if (name != expect_name)
    throw std::runtime_error(r.what + ": expected tensor \"" + expect_name + "\", found \"" +
                             name + "\"");
  const uint32_t rank = r.get_u32();
  if (rank > 8) throw std::runtime_error(r.what + ": absurd tensor rank");
  std::vector<int> shape;
  for (uint32_t i = 0; i < rank; ++i) shape.push_back((int)r.get_u32());
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data) v = r.get_f32();
  return t;
}

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& model, const std::string& provenance,
                            const std::string& path) {
  bytesio::Writer w;
  w.put_magic("FATCKPT1");
  w.put_u32(kCheckpointVersion);
  w.put_u32((uint32_t)model.arch.in_channels);
  w.put_u32((uint32_t)model.arch.base_width);
  w.put_u32((uint32_t)model.arch.n_classes);
  w.put_string(provenance);
  w.put_u32((uint32_t)kModelTensorCount);
  auto ts = model_tensors(model);
  auto names = model_tensor_names();
  for (int i = 0; i < kModelTensorCount; ++i) put_tensor(w, names[(size_t)i], *ts[(size_t)i]);
  w.seal_with_hash();
  bytesio::write_file(path, w.bytes, "checkpoint");
}

inline ModelParams load_checkpoint(const std::string& path, std::string* provenance = nullptr) {
  const std::vector<uint8_t> bytes = bytesio::read_file(path, "checkpoint");
  bytesio::Reader r(bytes, "checkpoint");
  bytesio::check_sealed(r);
  r.expect_magic("FATCKPT1");
  const uint32_t version = r.get_u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ArchDescriptor arch;
  arch.in_channels = (int)r.get_u32();
  arch.base_width = (int)r.get_u32();
  arch.n_classes = (int)r.get_u32();
  const std::string prov = r.get_string();
  if (provenance) *provenance = prov;
  const uint32_t count = r.get_u32();
  if (count != (uint32_t)kModelTensorCount)
    throw std::runtime_error("checkpoint: expected " + std::to_string(kModelTensorCount) +
                             " tensors, found " + std::to_string(count));
  ModelParams model = model_shell(arch);
  auto ts = model_tensors(model);
  auto names = model_tensor_names();
  for (int i = 0; i < kModelTensorCount; ++i) {
    Tensor t = get_tensor(r, names[(size_t)i]);
    if (!t.same_shape(*ts[(size_t)i]))
      throw std::runtime_error("checkpoint: tensor " + names[(size_t)i] + " has shape " +
                               shape_str(t.shape) + ", architecture dictates " +
                               shape_str(ts[(size_t)i]->shape));
    *ts[(size_t)i] = std::move(t);
  }
  return model;
}

constexpr uint32_t kBundleVersion = 1;

inline void put_labels(bytesio::Writer& w, const std::string& name, const LabelMap& m) {
  w.put_string(name);
  w.put_u32((uint32_t)m.b);
  w.put_u32((uint32_t)m.h);
  w.put_u32((uint32_t)m.w);
  w.put_u32((uint32_t)m.n_classes);
  for (int v : m.ids) w.put_u32((uint32_t)v);
}

inline LabelMap get_labels(bytesio::Reader& r, const std::string& expect_name) {
  const std::string name = r.get_string();
  if (name != expect_name)
    throw std::runtime_error(r.what + ": expected labels \"" + expect_name + "\", found \"" +
                             name + "\"");
  const int b = (int)r.get_u32(), h = (int)r.get_u32(), w = (int)r.get_u32();
  const int n_classes = (int)r.get_u32();
  LabelMap m(b, h, w, n_classes);
  for (int& v : m.ids) v = (int)r.get_u32();
  validate_labels(m, r.what);
  return m;
}

struct DatasetBundle {
  std::vector<SiloDataset> silos;
  SiloDataset test;
};

/// Pins the exact data of a run: every training silo (hidden truth included)
/// plus the test set. Generator recipes are not persisted.
inline void save_dataset_bundle(const std::vector<SiloDataset>& silos, const SiloDataset& test,
                                const std::string& path) {
  bytesio::Writer w;
  w.put_magic("FATDATA1");
  w.put_u32(kBundleVersion);
  w.put_u32((uint32_t)silos.size());
  for (size_t k = 0; k < silos.size(); ++k) {
    const SiloDataset& s = silos[k];
    validate_silo(s);
    require(s.diagnostic_labels.has_value(), "bundle: silo without ground truth");
    const std::string tag = "silo" + std::to_string(k);
    w.put_u32((uint32_t)s.silo_id);
    w.put_u32(s.supervised ? 1u : 0u);
    put_tensor(w, tag + ".images", s.images);
    put_labels(w, tag + ".labels_hidden", *s.diagnostic_labels);
  }
  validate_silo(test);
  require(test.labels.has_value(), "bundle: test set must carry labels");
  w.put_u32((uint32_t)test.silo_id);
  put_tensor(w, "test.images", test.images);
  put_labels(w, "test.labels", *test.labels);
  w.seal_with_hash();
  bytesio::write_file(path, w.bytes, "bundle");
}

inline DatasetBundle load_dataset_bundle(const std::string& path) {
  const std::vector<uint8_t> bytes = bytesio::read_file(path, "bundle");
  bytesio::Reader r(bytes, "bundle");
  bytesio::check_sealed(r);
  r.expect_magic("FATDATA1");
  const uint32_t version = r.get_u32();
  if (version != kBundleVersion)
    throw std::runtime_error("bundle: unsupported version " + std::to_string(version));
  DatasetBundle out;
  const uint32_t n = r.get_u32();
  for (uint32_t k = 0; k < n; ++k) {
    SiloDataset s;
    s.silo_id = (int)r.get_u32();
    s.supervised = r.get_u32() != 0;
    const std::string tag = "silo" + std::to_string(k);
    s.images = get_tensor(r, tag + ".images");
    s.diagnostic_labels = get_labels(r, tag + ".labels_hidden");
    if (s.supervised) s.labels = s.diagnostic_labels;
    validate_silo(s);
    out.silos.push_back(std::move(s));
  }
  out.test.silo_id = (int)r.get_u32();
  out.test.supervised = true;
  out.test.images = get_tensor(r, "test.images");
  out.test.labels = get_labels(r, "test.labels");
  out.test.diagnostic_labels = out.test.labels;
  validate_silo(out.test);
  return out;
}

}  // namespace fat
