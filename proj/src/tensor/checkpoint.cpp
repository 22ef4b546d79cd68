#include "coad/tensor/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "coad/error.hpp"

namespace coad::tensor {

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U get(std::istream& in) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw DataError("checkpoint truncated");
  return s;
}

}  // namespace

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                      const std::vector<std::pair<std::string, const Tensor<T>*>>& params) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint8_t>(out, kCheckpointVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(T)));
    put_string(out, config_json);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
      for (auto e : tensor->shape()) put<std::uint64_t>(out, e);
      out.write(reinterpret_cast<const char*>(tensor->data()), static_cast<std::streamsize>(tensor->size() * sizeof(T)));
    }
    if (!out) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint8_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.value_width = get<std::uint8_t>(in);
  if (ck.value_width != 4 && ck.value_width != 8) throw DataError("checkpoint value width must be 4 or 8");
  ck.config_json = get_string(in);
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = get_string(in);
    const auto rank = get<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint parameter rank too large: " + e.name);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
    const auto n = element_count(e.shape);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      e.values[k] = ck.value_width == 4 ? static_cast<double>(get<float>(in)) : get<double>(in);
    }
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

template void write_checkpoint<float>(const std::filesystem::path&, const std::string&,
                                      const std::vector<std::pair<std::string, const Tensor<float>*>>&);
template void write_checkpoint<double>(const std::filesystem::path&, const std::string&,
                                       const std::vector<std::pair<std::string, const Tensor<double>*>>&);

}  // namespace coad::tensor
