#include <fstream>

#include "spkemb/error.hpp"
#include "spkemb/io.hpp"

namespace spkemb {
namespace {
constexpr char kFeatMagic[8] = {'S', 'P', 'K', 'F', 'E', 'A', 'T', '1'};
}

void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureMatrix>& feats) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  const std::uint32_t dim = feats.empty() ? kFeatureDim : feats.front().dim;
  os.write(kFeatMagic, 8);
  write_u32(os, dim);
  write_u32(os, static_cast<std::uint32_t>(feats.size()));
  for (const FeatureMatrix& f : feats) {
    require(f.dim == dim, ErrorKind::kDimension,
            "feature cache records must share one dimension");
    write_string(os, f.utt_id);
    write_string(os, f.speaker_id);
    write_u32(os, static_cast<std::uint32_t>(f.num_frames));
    write_f32_array(os, f.data.data(), f.data.size());
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<FeatureMatrix> read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  require(is && std::equal(magic, magic + 8, kFeatMagic), ErrorKind::kIntegrity,
          path.string() + ": bad feature cache magic");
  const std::uint32_t dim = read_u32(is);
  const std::uint32_t count = read_u32(is);
  std::vector<FeatureMatrix> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureMatrix f;
    f.utt_id = read_string(is);
    f.speaker_id = read_string(is);
    f.num_frames = read_u32(is);
    f.dim = dim;
    f.data.resize(f.num_frames * dim);
    read_f32_array(is, f.data.data(), f.data.size());
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace spkemb
