// SPDX-License-Identifier: Apache-2.0
// Checkpoint container: 8-byte magic, u64 LE header length, JSON header,
// then every tensor as raw little-endian float64 in header order.
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "scalabl/config.hpp"
#include "scalabl/errors.hpp"
#include "scalabl/trainer.hpp"

namespace scalabl {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'C', 'A', 'L', 'A', 'B', 'L', '\0'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

json kv_json(const KeyValues& kv) {
  json out = json::object();
  for (const auto& [k, v] : kv) out[k] = v;
  return out;
}

KeyValues json_kv(const json& j, const char* what) {
  if (!j.is_object()) throw FormatError(std::string("checkpoint header: '") + what + "' is not an object");
  KeyValues kv;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) {
      throw FormatError(std::string("checkpoint header: '") + what + "." + it.key() + "' is not a string");
    }
    kv.emplace_back(it.key(), it.value().get<std::string>());
  }
  return kv;
}

template <class T>
T section_from(const json& header, const char* key) {
  if (!header.contains(key)) throw FormatError(std::string("checkpoint header lacks '") + key + "'");
  try {
    return from_kv<T>(json_kv(header.at(key), key));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header section '") + key + "': " + e.what());
  }
}

void append_tensors(json& list, std::vector<const NamedTensor*>& order, const char* group,
                    const std::vector<NamedTensor>& tensors) {
  for (const NamedTensor& nt : tensors) {
    list.push_back({{"group", group}, {"name", nt.name}, {"shape", nt.value.shape()}});
    order.push_back(&nt);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["version"] = ckpt.version;
  header["method"] = kv_json(to_kv(ckpt.method));
  header["train"] = kv_json(to_kv(ckpt.train));
  header["host"] = kv_json(to_kv(ckpt.host));
  header["step"] = ckpt.step;
  header["rng"] = {{"seed", ckpt.noise_rng.seed()},
                   {"stream_id", ckpt.noise_rng.stream_id()},
                   {"counter", ckpt.noise_rng.counter()}};
  header["base_fingerprint"] = ckpt.base_fingerprint;
  header["data_fingerprint"] = ckpt.data_fingerprint;
  header["adam_t"] = ckpt.adam_t;
  json list = json::array();
  std::vector<const NamedTensor*> order;
  append_tensors(list, order, "param", ckpt.params);
  append_tensors(list, order, "adam_m", ckpt.adam_m);
  append_tensors(list, order, "adam_v", ckpt.adam_v);
  header["tensors"] = std::move(list);

  const std::string text = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  const std::uint64_t len = to_le(text.size());
  blob.append(reinterpret_cast<const char*>(&len), sizeof len);
  blob += text;
  for (const NamedTensor* nt : order) {
    for (double v : nt->value.data()) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
      blob.append(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + tmp);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw FormatError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string blob = ss.str();

  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(path + " is not a checkpoint file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, blob.data() + 8, sizeof len);
  len = to_le(len);
  if (len > blob.size() - 16) throw FormatError("corrupt checkpoint " + path + ": truncated header");

  json header;
  try {
    header = json::parse(blob.begin() + 16, blob.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint " + path + ": " + e.what());
  }

  Checkpoint c;
  try {
    c.version = header.at("version").get<int>();
    if (c.version != kCheckpointVersion) {
      throw FormatError("checkpoint " + path + " has format version " + std::to_string(c.version) +
                        ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    c.method = section_from<MethodSpec>(header, "method");
    c.train = section_from<TrainConfig>(header, "train");
    c.host = section_from<HostConfig>(header, "host");
    c.step = header.at("step").get<std::uint64_t>();
    const json& rng = header.at("rng");
    c.noise_rng = RngStream(rng.at("seed").get<std::uint64_t>(), rng.at("stream_id").get<std::uint64_t>(),
                            rng.at("counter").get<std::uint64_t>());
    c.base_fingerprint = header.at("base_fingerprint").get<std::uint64_t>();
    c.data_fingerprint = header.at("data_fingerprint").get<std::uint64_t>();
    c.adam_t = header.at("adam_t").get<std::uint64_t>();

    std::size_t offset = 16 + len;
    for (const json& t : header.at("tensors")) {
      const std::string group = t.at("group").get<std::string>();
      Shape shape = t.at("shape").get<Shape>();
      NamedTensor nt{t.at("name").get<std::string>(), Tensor::zeros(shape)};
      const std::size_t bytes = nt.value.size() * sizeof(double);
      if (bytes > blob.size() - offset) {
        throw FormatError("corrupt checkpoint " + path + ": tensor data truncated at '" + nt.name + "'");
      }
      for (double& v : nt.value.data()) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, blob.data() + offset, sizeof bits);
        v = std::bit_cast<double>(to_le(bits));
        offset += sizeof bits;
      }
      if (group == "param") c.params.push_back(std::move(nt));
      else if (group == "adam_m") c.adam_m.push_back(std::move(nt));
      else if (group == "adam_v") c.adam_v.push_back(std::move(nt));
      else throw FormatError("corrupt checkpoint " + path + ": unknown tensor group '" + group + "'");
    }
    if (offset != blob.size()) throw FormatError("corrupt checkpoint " + path + ": trailing bytes");
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint " + path + ": " + e.what());
  }
  return c;
}

}  // namespace scalabl
