#include "ebmm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ebmm/errors.hpp"

namespace ebmm {

// The payload is raw IEEE-754 doubles in file byte order; we only ever run on
// little-endian hosts and say so at compile time rather than byte-swapping.
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

std::string payload_name(const std::string& stem) {
  return fs::path(stem).filename().string() + ".bin";
}

}  // namespace

void save_checkpoint(const std::string& stem,
                     const std::vector<CheckpointEntry>& entries,
                     const CheckpointInfo& info) {
  std::string payload;
  json names = json::array();
  for (const auto& e : entries) {
    if (!e.tensor.defined())
      throw ContractError("checkpoint entry " + e.name + " is undefined");
    const std::size_t bytes = e.tensor.size() * sizeof(double);
    const std::size_t off = payload.size();
    payload.resize(off + bytes);
    std::memcpy(payload.data() + off, e.tensor.data(), bytes);
    names.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
  }

  json manifest;
  manifest["schema"] = 1;
  manifest["config_digest"] = info.config_digest;
  manifest["iteration"] = info.iteration;
  manifest["payload"] = payload_name(stem);
  manifest["entries"] = std::move(names);

  atomic_write(stem + ".bin", payload);
  atomic_write(stem + ".json", manifest.dump(2) + "\n");
}

CheckpointInfo load_checkpoint(const std::string& stem,
                               std::vector<CheckpointEntry>& entries) {
  const std::string manifest_path = stem + ".json";
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw ArtifactError("missing checkpoint manifest " + manifest_path);
  std::stringstream mbuf;
  mbuf << mf.rdbuf();

  json manifest;
  try {
    manifest = json::parse(mbuf.str());
  } catch (const json::exception& e) {
    throw ArtifactError("unreadable checkpoint manifest " + manifest_path +
                        ": " + e.what());
  }
  if (!manifest.is_object() || manifest.value("schema", 0) != 1)
    throw ArtifactError("checkpoint manifest " + manifest_path +
                        " has unsupported schema");
  if (!manifest.contains("config_digest") ||
      !manifest["config_digest"].is_string() ||
      !manifest.contains("iteration") ||
      !manifest["iteration"].is_number_integer() ||
      !manifest.contains("payload") || !manifest["payload"].is_string() ||
      !manifest.contains("entries") || !manifest["entries"].is_array())
    throw ArtifactError("checkpoint manifest " + manifest_path +
                        " is missing required fields");

  struct Stored {
    std::vector<int> shape;
    std::size_t offset = 0;  // doubles, not bytes
    std::size_t count = 0;
  };
  std::unordered_map<std::string, Stored> stored;
  std::size_t total = 0;
  for (const auto& item : manifest["entries"]) {
    if (!item.is_object() || !item.contains("name") ||
        !item["name"].is_string() || !item.contains("shape") ||
        !item["shape"].is_array())
      throw ArtifactError("checkpoint manifest " + manifest_path +
                          " has a malformed entry");
    Stored s;
    s.shape = item["shape"].get<std::vector<int>>();
    s.offset = total;
    s.count = 1;
    for (int ext : s.shape) {
      if (ext <= 0)
        throw ArtifactError("checkpoint manifest " + manifest_path +
                            " has a non-positive extent");
      s.count *= static_cast<std::size_t>(ext);
    }
    total += s.count;
    const std::string name = item["name"].get<std::string>();
    if (!stored.emplace(name, std::move(s)).second)
      throw ArtifactError("checkpoint manifest " + manifest_path +
                          " repeats entry " + name);
  }

  const std::string payload_path =
      (fs::path(manifest_path).parent_path() /
       manifest["payload"].get<std::string>())
          .string();
  std::ifstream pf(payload_path, std::ios::binary);
  if (!pf) throw ArtifactError("missing checkpoint payload " + payload_path);
  std::string payload((std::istreambuf_iterator<char>(pf)),
                      std::istreambuf_iterator<char>());
  if (payload.size() != total * sizeof(double))
    throw ArtifactError("checkpoint payload " + payload_path + " holds " +
                        std::to_string(payload.size()) + " bytes, manifest " +
                        manifest_path + " declares " +
                        std::to_string(total * sizeof(double)));

  if (entries.size() != stored.size())
    throw ArtifactError("checkpoint " + stem + " holds " +
                        std::to_string(stored.size()) + " entries, expected " +
                        std::to_string(entries.size()));
  for (auto& e : entries) {
    auto it = stored.find(e.name);
    if (it == stored.end())
      throw ArtifactError("checkpoint " + stem + " lacks entry " + e.name);
    if (!e.tensor.defined())
      throw ContractError("checkpoint entry " + e.name + " is undefined");
    if (it->second.shape != e.tensor.shape())
      throw ArtifactError("checkpoint entry " + e.name + " has shape " +
                          Tensor(it->second.shape).shape_str() +
                          ", expected " + e.tensor.shape_str());
    std::memcpy(e.tensor.data(),
                payload.data() + it->second.offset * sizeof(double),
                it->second.count * sizeof(double));
  }

  CheckpointInfo info;
  info.iteration = manifest["iteration"].get<long>();
  info.config_digest = manifest["config_digest"].get<std::string>();
  return info;
}

}  // namespace ebmm
