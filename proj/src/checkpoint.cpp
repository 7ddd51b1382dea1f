#include "selfteach/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "selfteach/digest.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/records.hpp"

namespace selfteach {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'T', 'C', 'K', 'P', 'T', '\r', '\n'};

template <class Int>
void put_int(std::string& out, Int v) {
  char buf[sizeof(Int)];
  std::memcpy(buf, &v, sizeof(Int));
  out.append(buf, sizeof(Int));
}

template <class Int>
Int get_int(const std::string& in, std::size_t at) {
  Int v;
  std::memcpy(&v, in.data() + at, sizeof(Int));
  return v;
}

std::string array_bytes(const ScorerParams& params) {
  std::string out;
  for (const auto& a : params.arrays()) {
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size_bytes());
  }
  return out;
}

}  // namespace

std::string params_digest(const ScorerParams& params) { return sha256_hex(array_bytes(params)); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ScorerParams& p = ckpt.params;
  Json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["id"] = ckpt.id;
  header["task"] = to_string(p.task);
  header["seed"] = p.seed;
  header["vocab_size"] = p.vocab_size;
  header["d_emb"] = p.d_emb;
  header["max_len"] = ckpt.max_len;
  Json shapes = Json::array();
  for (const auto& a : p.arrays()) {
    shapes.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32le"}, {"count", a.data.size()}});
  }
  header["arrays"] = shapes;
  if (ckpt.vocab) {
    if (ckpt.vocab->size() != p.vocab_size) {
      throw ContractError("checkpoint vocabulary does not match embedding rows");
    }
    header["vocab"] = std::vector<std::uint32_t>(ckpt.vocab->chars().begin(), ckpt.vocab->chars().end());
  } else {
    header["vocab"] = nullptr;
  }
  header["lineage"] = {{"stage", ckpt.lineage.stage},
                       {"manifest_hash", ckpt.lineage.manifest_hash},
                       {"parent_id", ckpt.lineage.parent_id},
                       {"soft_file_ids", ckpt.lineage.soft_file_ids}};

  const std::string header_bytes = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_int<std::uint32_t>(out, kCheckpointFormatVersion);
  put_int<std::uint64_t>(out, header_bytes.size());
  out += header_bytes;
  out += array_bytes(p);
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Task> expected_task) {
  const std::string bytes = read_file(path);
  constexpr std::size_t kPrefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint or truncated header");
  }
  const auto version = get_int<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  const auto header_len = get_int<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (header_len > bytes.size() - kPrefix) throw CheckpointError(path.string() + ": truncated header");

  Checkpoint ckpt;
  std::size_t offset = kPrefix + header_len;
  try {
    const Json header = Json::parse(bytes.substr(kPrefix, header_len));
    if (header.at("format_version").get<std::uint32_t>() != version) {
      throw CheckpointError(path.string() + ": header version disagrees with container");
    }
    const Task task = task_from_string(header.at("task").get<std::string>());
    if (expected_task && *expected_task != task) {
      throw ContractError(path.string() + ": checkpoint holds a " + to_string(task) + " head, expected " +
                          to_string(*expected_task));
    }
    ckpt.id = header.at("id").get<std::string>();
    ckpt.max_len = header.at("max_len").get<std::size_t>();
    const auto vocab_size = header.at("vocab_size").get<std::size_t>();
    const auto d_emb = header.at("d_emb").get<std::size_t>();
    ckpt.params = ScorerParams::zeros(task, vocab_size, d_emb);
    ckpt.params.seed = header.at("seed").get<std::uint64_t>();
    if (!header.at("vocab").is_null()) {
      const auto chars = header.at("vocab").get<std::vector<std::uint32_t>>();
      ckpt.vocab = Vocabulary::from_chars(std::vector<char32_t>(chars.begin(), chars.end()));
      if (ckpt.vocab->size() != vocab_size) throw CheckpointError(path.string() + ": vocabulary size mismatch");
    }
    const auto& lineage = header.at("lineage");
    ckpt.lineage.stage = lineage.at("stage").get<std::string>();
    ckpt.lineage.manifest_hash = lineage.at("manifest_hash").get<std::string>();
    ckpt.lineage.parent_id = lineage.at("parent_id").get<std::string>();
    ckpt.lineage.soft_file_ids = lineage.at("soft_file_ids").get<std::vector<std::string>>();

    const auto& table = header.at("arrays");
    auto arrays = ckpt.params.arrays();
    if (table.size() != arrays.size()) throw ContractError(path.string() + ": array table does not match the head");
    for (std::size_t a = 0; a < arrays.size(); ++a) {
      if (table[a].at("name").get<std::string>() != arrays[a].name ||
          table[a].at("shape").get<std::vector<std::size_t>>() != arrays[a].shape) {
        throw ContractError(path.string() + ": shape mismatch for " + arrays[a].name);
      }
      const std::size_t n = arrays[a].data.size_bytes();
      if (offset + n > bytes.size()) throw CheckpointError(path.string() + ": truncated array data");
      std::memcpy(arrays[a].data.data(), bytes.data() + offset, n);
      offset += n;
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  if (offset != bytes.size()) throw CheckpointError(path.string() + ": trailing bytes after array data");
  return ckpt;
}

void save_params(const std::filesystem::path& path, const ScorerParams& params) {
  Checkpoint ckpt;
  ckpt.id = "params-" + params_digest(params).substr(0, 16);
  ckpt.params = params;
  save_checkpoint(path, ckpt);
}

ScorerParams load_params(const std::filesystem::path& path, std::optional<Task> expected_task) {
  return load_checkpoint(path, expected_task).params;
}

}  // namespace selfteach
