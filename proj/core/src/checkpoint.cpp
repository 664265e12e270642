#include "flowvip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "flowvip/errors.hpp"

namespace flowvip::io {

static_assert(std::endian::native == std::endian::little, "record files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'V', 'I', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(path + ": truncated record file");
  return v;
}

std::string get_string(std::istream& is, uint64_t n, const std::string& path) {
  if (n > (uint64_t{1} << 32)) throw DataError(path + ": implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError(path + ": truncated record file");
  return s;
}

}  // namespace

void write_records(const std::string& path, const std::string& header, const nn::ParameterList& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kVersion);
  put<uint32_t>(os, sizeof(Scalar));
  put<uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<uint64_t>(os, records.size());
  for (const auto& r : records) {
    put<uint32_t>(os, static_cast<uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    const Shape& s = r.tensor.shape();
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    for (int64_t d : s) put<uint64_t>(os, static_cast<uint64_t>(d));
    auto data = r.tensor.data();
    put<uint64_t>(os, data.size_bytes());
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!os) throw DataError("write failed for " + path);
}

RecordFile read_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError(path + ": not a record file");
  const auto version = get<uint32_t>(is, path);
  if (version != kVersion) throw DataError(path + ": unsupported format version " + std::to_string(version));
  const auto width = get<uint32_t>(is, path);
  if (width != sizeof(Scalar)) {
    throw DataError(path + ": stored with " + std::to_string(width) + "-byte scalars, build uses " +
                    std::to_string(sizeof(Scalar)));
  }
  RecordFile out;
  out.header = get_string(is, get<uint64_t>(is, path), path);
  const auto count = get<uint64_t>(is, path);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<uint32_t>(is, path), path);
    const auto rank = get<uint32_t>(is, path);
    if (rank > 8) throw DataError(path + ": record " + name + " has implausible rank");
    Shape s(rank);
    for (auto& d : s) d = static_cast<int64_t>(get<uint64_t>(is, path));
    const auto bytes = get<uint64_t>(is, path);
    if (bytes != static_cast<uint64_t>(numel_of(s)) * sizeof(Scalar)) {
      throw DataError(path + ": record " + name + " payload does not match its shape");
    }
    std::vector<Scalar> v(numel_of(s));
    if (bytes && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes))) {
      throw DataError(path + ": truncated record file");
    }
    out.records.push_back({std::move(name), Tensor::from(s, std::move(v))});
  }
  return out;
}

void assign_records(const nn::ParameterList& destination, const nn::ParameterList& source) {
  std::unordered_map<std::string, const Tensor*> byname;
  for (const auto& r : source) byname[r.name] = &r.tensor;
  for (const auto& d : destination) {
    auto it = byname.find(d.name);
    if (it == byname.end()) throw DataError("checkpoint lacks " + d.name);
    if (it->second->shape() != d.tensor.shape()) {
      throw DataError("checkpoint shape mismatch for " + d.name + ": " + shape_str(it->second->shape()) + " vs " +
                      shape_str(d.tensor.shape()));
    }
    Tensor dst = d.tensor;
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace flowvip::io
