#include <fstream>
#include <nlohmann/json.hpp>

#include "spkemb/io.hpp"
#include "spkemb/model.hpp"

namespace spkemb {
namespace {

constexpr char kCkptMagic[8] = {'S', 'P', 'K', 'E', 'M', 'B', 'C', 'K'};

nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"kind", a.kind == ArchKind::kResCNN ? "rescnn" : "gru"},
          {"name", a.name},
          {"input_freq", a.input_freq},
          {"embed_dim", a.embed_dim},
          {"channels", a.channels},
          {"blocks_per_stage", a.blocks_per_stage},
          {"gru_units", a.gru_units},
          {"num_classes", a.num_classes}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  const std::string kind = j.at("kind").get<std::string>();
  require(kind == "rescnn" || kind == "gru", ErrorKind::kIntegrity,
          "unknown architecture kind " + kind);
  a.kind = kind == "rescnn" ? ArchKind::kResCNN : ArchKind::kGRU;
  a.name = j.at("name").get<std::string>();
  a.input_freq = j.at("input_freq").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.channels = j.at("channels").get<std::vector<std::size_t>>();
  a.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  a.gru_units = j.at("gru_units").get<std::vector<std::size_t>>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  return a;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["arch"] = arch_to_json(params.arch);
  meta["seed"] = params.seed;
  meta["epoch"] = params.epoch;
  meta["tensors"] = nlohmann::json::array();
  const auto refs = params.named_tensors();
  for (const auto& r : refs)
    meta["tensors"].push_back({{"name", r.name}, {"shape", r.tensor->shape()}});
  const std::string text = meta.dump();

  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os.write(kCkptMagic, 8);
  write_u32(os, kCheckpointVersion);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& r : refs) write_f32_array(os, r.tensor->data(), r.tensor->size());
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ArchSpec* expected) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  const auto file_size = std::filesystem::file_size(path);
  char magic[8];
  is.read(magic, 8);
  require(is && std::equal(magic, magic + 8, kCkptMagic), ErrorKind::kIntegrity,
          path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = read_u32(is);
  require(version == kCheckpointVersion, ErrorKind::kIntegrity,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t meta_len = read_u64(is);
  require(meta_len < file_size, ErrorKind::kIntegrity, path.string() + ": corrupt header");
  std::string text(meta_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(meta_len));
  require(static_cast<bool>(is), ErrorKind::kIntegrity, path.string() + ": truncated metadata");

  nlohmann::json meta;
  ArchSpec arch;
  try {
    meta = nlohmann::json::parse(text);
    arch = arch_from_json(meta.at("arch"));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kIntegrity, path.string() + ": bad metadata: " + e.what());
  }
  if (expected && !expected->same_trunk(arch)) {
    raise(ErrorKind::kArchMismatch, path.string() + " holds '" + arch.name +
                                        "' but '" + expected->name + "' was requested");
  }

  ModelParams params = build(arch, meta.value("seed", std::uint64_t{0}), false);
  params.epoch = meta.value("epoch", std::size_t{0});
  auto refs = params.named_tensors();
  const auto& index = meta.at("tensors");
  require(index.size() == refs.size(), ErrorKind::kIntegrity,
          path.string() + ": tensor count " + std::to_string(index.size()) +
              " does not match architecture (" + std::to_string(refs.size()) + ")");
  std::uint64_t payload = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::string name = index[i].at("name").get<std::string>();
    const Shape shape = index[i].at("shape").get<Shape>();
    require(name == refs[i].name, ErrorKind::kIntegrity,
            path.string() + ": expected tensor " + refs[i].name + ", found " + name);
    require(shape == refs[i].tensor->shape(), ErrorKind::kIntegrity,
            path.string() + ": tensor " + name + " has shape " + shape_string(shape));
    payload += shape_size(shape) * sizeof(float);
  }
  const std::uint64_t header = 8 + 4 + 8 + meta_len;
  require(file_size == header + payload, ErrorKind::kIntegrity,
          path.string() + ": payload is " + std::to_string(file_size - header) +
              " bytes, expected " + std::to_string(payload));
  for (auto& r : refs) read_f32_array(is, r.tensor->data(), r.tensor->size());
  require(params.parameter_count() == expected_parameter_count(params.arch),
          ErrorKind::kIntegrity, path.string() + ": parameter count mismatch");
  return params;
}

}  // namespace spkemb
