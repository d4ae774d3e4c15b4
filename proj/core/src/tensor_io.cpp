#include "mmworld/tensor_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace mmw {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error(path + ": read failed");
  return buf;
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(tmp + ": write failed");
  }
  fs::rename(tmp, target);
}

void write_tnsr(const std::string& path, const Tensor& t) {
  ByteWriter w;
  w.magic("TNSR", 4);
  w.u8(1);  // version
  w.u8(0);  // dtype f32
  w.u32(static_cast<uint32_t>(t.ndim()));
  for (int64_t e : t.shape()) w.u64(static_cast<uint64_t>(e));
  std::vector<float> payload(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  w.raw(payload.data(), payload.size() * sizeof(float));
  atomic_write_file(path, w.bytes());
}

Tensor read_tnsr(const std::string& path) {
  const std::string buf = read_file(path);
  ByteReader r(buf, path);
  r.expect_magic("TNSR", 4);
  const uint8_t version = r.u8();
  if (version != 1) r.fail("unsupported TNSR version " + std::to_string(version), r.pos() - 1);
  const uint8_t dtype = r.u8();
  if (dtype != 0) r.fail("unsupported dtype " + std::to_string(dtype), r.pos() - 1);
  const uint32_t ndim = r.u32();
  if (ndim > 16) r.fail("implausible ndim " + std::to_string(ndim), r.pos() - 4);
  Shape shape(ndim);
  int64_t n = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    shape[i] = static_cast<int64_t>(r.u64());
    if (shape[i] < 1) r.fail("non-positive extent", r.pos() - 8);
    n *= shape[i];
  }
  std::vector<float> payload(static_cast<size_t>(n));
  r.raw(payload.data(), static_cast<size_t>(n) * sizeof(float), "payload");
  if (r.remaining() != 0) r.fail("trailing bytes");
  std::vector<double> data(payload.begin(), payload.end());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace mmw
