#include "cinegen/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cinegen/container.hpp"

namespace cinegen {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMaskSuffix = "_mask";

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

std::string record_stem(const std::string& prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return prefix + "_" + buf;
}

void write_phantom_dir(const fs::path& dir, const std::vector<PhantomRecord>& records) {
  ensure_dir(dir);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string stem = record_stem("phantom", static_cast<int>(i));
    write_container(dir / (stem + ".t4d"), records[i].image);
    write_container(dir / (stem + kMaskSuffix + ".t4d"), records[i].lv_mask);
    std::ofstream js(dir / (stem + ".json"));
    if (!js) throw std::runtime_error("cannot write truth sidecar in " + dir.string());
    js << truth_to_json(records[i]).dump(2) << '\n';
  }
}

void write_volume_dir(const fs::path& dir, const std::vector<Volume4D>& volumes,
                      const std::string& prefix) {
  ensure_dir(dir);
  for (std::size_t i = 0; i < volumes.size(); ++i)
    write_container(dir / (record_stem(prefix, static_cast<int>(i)) + ".t4d"), volumes[i]);
}

void write_latent_dir(const fs::path& dir, const std::vector<LatentVolume>& latents,
                      const std::string& prefix) {
  ensure_dir(dir);
  for (std::size_t i = 0; i < latents.size(); ++i)
    write_container(dir / (record_stem(prefix, static_cast<int>(i)) + ".t4d"), latents[i]);
}

std::vector<fs::path> list_tensor_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".t4d") continue;
    if (e.path().stem().string().ends_with(kMaskSuffix)) continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .t4d files in " + dir.string());
  return files;
}

std::vector<CohortSample> read_cohort_dir(const fs::path& dir) {
  std::vector<CohortSample> out;
  for (const auto& p : list_tensor_files(dir)) {
    CohortSample s{read_volume(p), std::nullopt};
    const fs::path mask = p.parent_path() / (p.stem().string() + kMaskSuffix + ".t4d");
    if (fs::exists(mask)) s.mask = read_volume(mask);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Volume4D> read_volume_dir(const fs::path& dir) {
  std::vector<Volume4D> out;
  for (const auto& p : list_tensor_files(dir)) out.push_back(read_volume(p));
  return out;
}

std::vector<LatentVolume> read_latent_dir(const fs::path& dir) {
  std::vector<LatentVolume> out;
  for (const auto& p : list_tensor_files(dir)) out.push_back(read_latent(p));
  return out;
}

}  // namespace cinegen
