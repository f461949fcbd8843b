#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "fundus/params.hpp"

namespace fundus {

/// On-disk layout (all integers little-endian):
///
///   offset 0   8 bytes  magic "FNDSCKPT"
///   offset 8   u32      format version (1)
///   offset 12  u64      header length N in bytes
///   offset 20  N bytes  UTF-8 JSON header
///   offset 20+N         payload: IEEE-754 binary32 little-endian values
///
/// The header object has two members: "meta" (free-form: network specs,
/// ablation flag, counters) and "tensors", an array of
/// {"name", "shape": [n, c, h, w], "offset", "count"} where offset is the
/// byte offset into the payload. Tensors are stored in array order with
/// no padding between them.
struct Checkpoint {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  NetParams tensors;
};

inline constexpr char kCheckpointMagic[8] = {'F', 'N', 'D', 'S',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes via a temporary sibling and renames, so a failed write never
/// leaves a truncated checkpoint behind. Throws DataError on I/O failure.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies `group` entries under "<prefix>/<name>".
void insert_group(NetParams& into, const std::string& prefix,
                  const NetParams& group);
/// Entries named "<prefix>/..." with the prefix stripped, in stored order.
NetParams extract_group(const NetParams& from, const std::string& prefix);

}  // namespace fundus
