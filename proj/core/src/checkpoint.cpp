#include "vitlr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vitlr {

namespace {

void put_u16(std::ostream& out, uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(bytes, 2);
}

void put_u32(std::ostream& out, uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 4);
}

void put_f32(std::ostream& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

uint16_t get_u16(std::istream& in, const std::string& path) {
  unsigned char bytes[2];
  in.read(reinterpret_cast<char*>(bytes), 2);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return static_cast<uint16_t>(bytes[0] | (bytes[1] << 8));
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[i]) << (8 * i);
  return v;
}

bool is_buffer_name(const std::string& name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write("VTLR", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const std::string& name : params.names()) {
    const Tensor& t = params.at(name);
    check_arg(name.size() <= 0xFFFF, "parameter name too long: " + name);
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.extent(i)));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
  }
  if (!out) throw std::runtime_error("short write to checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VTLR", 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path.string());
  }
  const uint32_t version = get_u32(in, path.string());
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path.string());
  }
  const uint32_t count = get_u32(in, path.string());
  ParamStore store;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(in, path.string());
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    const int rank = in.get();
    if (rank == EOF || rank < 1 || rank > 4) {
      throw std::runtime_error("invalid tensor rank in " + path.string());
    }
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(get_u32(in, path.string()));
      if (shape[d] < 1) throw std::runtime_error("invalid tensor extent in " + path.string());
      numel *= shape[d];
    }
    std::vector<float> data(static_cast<size_t>(numel));
    for (int64_t j = 0; j < numel; ++j) {
      const uint32_t bits = get_u32(in, path.string());
      std::memcpy(&data[static_cast<size_t>(j)], &bits, 4);
    }
    if (store.contains(name)) {
      throw std::runtime_error("duplicate tensor name '" + name + "' in " + path.string());
    }
    store.add(name, Tensor(std::move(shape), std::move(data)), !is_buffer_name(name));
  }
  // Anything past the declared tensors is corruption.
  if (in.peek() != EOF) {
    throw std::runtime_error("trailing bytes after last tensor in " + path.string());
  }
  return store;
}

}  // namespace vitlr
