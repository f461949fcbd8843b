#include "fundus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fundus/errors.hpp"

namespace fs = std::filesystem;

namespace fundus {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.tensors.entries()) {
    const Shape& s = e.value.shape();
    header["tensors"].push_back({{"name", e.name},
                                 {"shape", {s.n, s.c, s.h, s.w}},
                                 {"offset", offset},
                                 {"count", e.value.size()}});
    offset += 4 * e.value.size();
  }
  const std::string text = header.dump();

  std::string blob;
  blob.reserve(20 + text.size() + offset);
  blob.append(kCheckpointMagic, 8);
  put_le<std::uint32_t>(blob, kCheckpointVersion);
  put_le<std::uint64_t>(blob, text.size());
  blob += text;
  for (const auto& e : ckpt.tensors.entries()) {
    for (double v : e.value.values()) {
      put_le<std::uint32_t>(blob,
                            std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw DataError("cannot create " + path.parent_path().string() + ": " +
                      ec.message());
    }
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("failed writing checkpoint " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("failed moving checkpoint into place: " + path.string());
  }
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 20 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
    throw DataError("not a checkpoint: " + path.string());
  }
  const auto version = get_le<std::uint32_t>(blob, 8);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(blob, 12);
  if (header_len > blob.size() - 20) {
    throw DataError("truncated checkpoint header: " + path.string());
  }
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(blob.substr(20, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  const std::size_t payload = 20 + header_len;

  Checkpoint ckpt;
  try {
    ckpt.meta = header.value("meta", nlohmann::ordered_json::object());
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<int>>();
      if (shape.size() != 4) throw DataError("checkpoint tensor must be rank 4");
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      const Shape s{shape[0], shape[1], shape[2], shape[3]};
      if (s.numel() != count || payload + offset + 4 * count > blob.size()) {
        throw DataError("checkpoint tensor " + t.at("name").get<std::string>() +
                        " is truncated or inconsistent");
      }
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<float>(
            get_le<std::uint32_t>(blob, payload + offset + 4 * i));
      }
      ckpt.tensors.add(t.at("name").get<std::string>(),
                       Tensor(s, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  return ckpt;
}

void insert_group(NetParams& into, const std::string& prefix,
                  const NetParams& group) {
  for (const auto& e : group.entries()) into.add(prefix + "/" + e.name, e.value);
}

NetParams extract_group(const NetParams& from, const std::string& prefix) {
  NetParams out;
  const std::string p = prefix + "/";
  for (const auto& e : from.entries()) {
    if (e.name.compare(0, p.size(), p) == 0) {
      out.add(e.name.substr(p.size()), e.value);
    }
  }
  return out;
}

}  // namespace fundus
