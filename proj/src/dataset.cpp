#include "fuselab/dataset.hpp"

#include "fuselab/attacks.hpp"
#include "fuselab/errors.hpp"

namespace fuselab {

Dataset make_dataset(DatasetManifest manifest, std::vector<Scene> scenes, const DepthStats &stats) {
  Dataset d;
  d.manifest = std::move(manifest);
  d.stats = stats;
  d.samples.reserve(scenes.size());
  for (auto &s : scenes) {
    Sample smp;
    smp.rgb01 = rgb_to_unit(s.rgb);
    smp.lidar = lidar_input(s.cloud, d.manifest.intrinsics, stats);
    smp.scene = std::move(s);
    d.samples.push_back(std::move(smp));
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path &dir, std::optional<DepthStats> stats) {
  DatasetManifest m = load_manifest(dir);
  if (!stats)
    stats = m.stats;
  if (!stats)
    throw ConfigError("dataset " + dir.string() + " has no depth normalization statistics");
  std::vector<Scene> scenes;
  scenes.reserve(m.scenes.size());
  for (std::size_t i = 0; i < m.scenes.size(); ++i)
    scenes.push_back(load_scene(dir, m, i));
  return make_dataset(std::move(m), std::move(scenes), *stats);
}

} // namespace fuselab
