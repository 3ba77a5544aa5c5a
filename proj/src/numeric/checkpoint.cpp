#include "avgn/numeric/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "avgn/numeric/errors.hpp"

namespace avgn {

namespace {


template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json index;
  index["meta"] = ckpt.meta;
  index["params"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, arr] : ckpt.params) {
    index["params"].push_back({{"name", name}, {"shape", arr.shape()}, {"offset", offset}});
    offset += arr.size();
  }
  const std::string header = index.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot write checkpoint " + path.string());
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, arr] : ckpt.params) {
    for (double v : arr.data()) {
      const double le = to_little(v);
      os.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
  if (!os) throw ArgumentError("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("cannot open checkpoint " + path.string());
  std::uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  header_len = to_little(header_len);
  if (!is || header_len > (1ULL << 30)) throw ArgumentError("bad checkpoint header in " + path.string());
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  const auto index = nlohmann::json::parse(header);
  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0) throw ArgumentError("truncated checkpoint payload");
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), rest.size());
    for (auto& v : payload) v = to_little(v);
  }
  Checkpoint ckpt;
  ckpt.meta = index.value("meta", nlohmann::json::object());
  for (const auto& p : index.at("params")) {
    Shape shape = p.at("shape").get<Shape>();
    const auto offset = p.at("offset").get<std::uint64_t>();
    const auto n = shape_numel(shape);
    if (offset + n > payload.size()) throw ArgumentError("checkpoint entry past payload end");
    ckpt.params.emplace(p.at("name").get<std::string>(),
                        NdArray(std::move(shape), std::vector<double>(payload.begin() + offset,
                                                                      payload.begin() + offset + n)));
  }
  return ckpt;
}

}  // namespace avgn
