#include <fstream>
#include <nlohmann/json.hpp>

#include "spkemb/io.hpp"
#include "spkemb/model.hpp"

namespace spkemb {
namespace {
constexpr char kEmbMagic[8] = {'S', 'P', 'K', 'E', 'M', 'B', 'V', '1'};
}

void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<SpeakerEmbedding>& embs) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  for (const SpeakerEmbedding& e : embs) {
    nlohmann::json j{{"utt", e.utt_id}, {"spk", e.speaker_id}, {"vec", e.vector}};
    os << j.dump() << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<SpeakerEmbedding> read_embeddings_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<SpeakerEmbedding> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SpeakerEmbedding e;
      e.utt_id = j.at("utt").get<std::string>();
      e.speaker_id = j.value("spk", std::string{});
      e.vector = j.at("vec").get<std::vector<float>>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      raise(ErrorKind::kParse, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_embeddings_binary(const std::filesystem::path& path,
                             const std::vector<SpeakerEmbedding>& embs) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  const std::uint32_t dim = embs.empty() ? 0 : static_cast<std::uint32_t>(embs[0].vector.size());
  os.write(kEmbMagic, 8);
  write_u32(os, dim);
  write_u32(os, static_cast<std::uint32_t>(embs.size()));
  for (const SpeakerEmbedding& e : embs) {
    require(e.vector.size() == dim, ErrorKind::kDimension, "embeddings must share one dimension");
    write_string(os, e.utt_id);
    write_string(os, e.speaker_id);
    write_f32_array(os, e.vector.data(), dim);
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<SpeakerEmbedding> read_embeddings_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  require(is && std::equal(magic, magic + 8, kEmbMagic), ErrorKind::kIntegrity,
          path.string() + ": bad embedding file magic");
  const std::uint32_t dim = read_u32(is);
  const std::uint32_t count = read_u32(is);
  std::vector<SpeakerEmbedding> out(count);
  for (SpeakerEmbedding& e : out) {
    e.utt_id = read_string(is);
    e.speaker_id = read_string(is);
    e.vector.resize(dim);
    read_f32_array(is, e.vector.data(), dim);
  }
  return out;
}

}  // namespace spkemb
