#pragma once

#include <filesystem>

#include "vitlr/model.hpp"

namespace vitlr {

// Chunked binary checkpoint, little-endian:
//   magic "VTLR" | format version u32 | tensor count u32
//   per tensor: name length u16, UTF-8 name, rank u8, extents u32 each,
//               raw float32 data
// Save/load roundtrips bit-exactly. Load rejects wrong magic or version,
// duplicate names, and truncated files.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace vitlr
