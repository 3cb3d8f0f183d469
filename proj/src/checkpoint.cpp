#include "bg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace bg {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'B', 'G', 'C', 'K', 'P', 'T', '0', '1'};
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw ArtifactError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

std::uint64_t Checkpoint::params_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data(), t.numel() * sizeof(double), h);
  }
  return h;
}

void Checkpoint::add_params(const std::vector<Param*>& params) {
  for (const Param* p : params) tensors[p->name] = p->value;
}

void Checkpoint::load_into(const std::vector<Param*>& params) const {
  for (Param* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end())
      throw ArtifactError("checkpoint: missing tensor '" + p->name + "'");
    if (!it->second.same_shape(p->value))
      throw ArtifactError("checkpoint: shape mismatch for '" + p->name +
                          "': " + it->second.shape_str() + " vs " +
                          p->value.shape_str());
    p->value = it->second;
  }
}

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
  std::vector<double> blob;
  json index = json::array(), opt_index = json::array();
  auto append = [&blob](json& idx, const std::string& name, const Tensor& t) {
    idx.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"offset", blob.size()},
                   {"count", t.numel()}});
    blob.insert(blob.end(), t.data(), t.data() + t.numel());
  };
  for (const auto& [name, t] : ckpt.tensors) append(index, name, t);
  for (const auto& [name, t] : ckpt.opt_state) append(opt_index, name, t);

  const std::uint64_t checksum =
      fnv1a64(blob.data(), blob.size() * sizeof(double));
  json header = {
      {"stage", ckpt.stage},
      {"tensors", index},
      {"opt_state", opt_index},
      {"extra", ckpt.extra},
      {"checksum", to_hex(checksum)},
  };
  if (!ckpt.config_snapshot.empty())
    header["config"] = json::parse(ckpt.config_snapshot);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ArtifactError("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!out)
    throw ArtifactError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ArtifactError("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ArtifactError("load_checkpoint: bad magic in " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in)
    throw ArtifactError("load_checkpoint: truncated header in " +
                        path.string());
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw ArtifactError("load_checkpoint: corrupt header in " + path.string() +
                        ": " + e.what());
  }

  std::vector<double> blob;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    if (raw.size() % sizeof(double) != 0)
      throw ArtifactError("load_checkpoint: blob size not a multiple of 8 in " +
                          path.string());
    blob.resize(raw.size() / sizeof(double));
    std::memcpy(blob.data(), raw.data(), raw.size());
  }
  const std::uint64_t checksum =
      fnv1a64(blob.data(), blob.size() * sizeof(double));
  if (to_hex(checksum) != header.at("checksum").get<std::string>())
    throw ArtifactError("load_checkpoint: checksum mismatch in " +
                        path.string());

  Checkpoint ckpt;
  ckpt.stage = header.at("stage").get<std::string>();
  if (header.contains("config")) ckpt.config_snapshot = header["config"].dump();
  if (header.contains("extra"))
    ckpt.extra = header["extra"].get<std::map<std::string, std::string>>();
  auto read_tensors = [&](const json& idx,
                          std::map<std::string, Tensor>& dst) {
    for (const auto& e : idx) {
      Tensor t(e.at("shape").get<std::vector<int>>());
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t cnt = e.at("count").get<std::size_t>();
      if (off + cnt > blob.size() || cnt != t.numel())
        throw ArtifactError("load_checkpoint: bad tensor index in " +
                            path.string());
      std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
                blob.begin() + static_cast<std::ptrdiff_t>(off + cnt),
                t.data());
      dst[e.at("name").get<std::string>()] = std::move(t);
    }
  };
  read_tensors(header.at("tensors"), ckpt.tensors);
  read_tensors(header.at("opt_state"), ckpt.opt_state);
  return ckpt;
}

}  // namespace bg
