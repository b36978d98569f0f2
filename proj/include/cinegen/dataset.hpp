#pragma once

// Directory layouts shared by the pipeline stages. Every tensor is one T4D1
// file; names are <prefix>_<index:04>.t4d and a cavity mask, when present,
// sits next to its image as <stem>_mask.t4d.

#include <filesystem>
#include <string>
#include <vector>

#include "cinegen/evaluate.hpp"
#include "cinegen/phantom.hpp"

namespace cinegen {

std::string record_stem(const std::string& prefix, int index);

/// Image, mask and a JSON truth sidecar per record.
void write_phantom_dir(const std::filesystem::path& dir, const std::vector<PhantomRecord>& records);
void write_volume_dir(const std::filesystem::path& dir, const std::vector<Volume4D>& volumes,
                      const std::string& prefix);
void write_latent_dir(const std::filesystem::path& dir, const std::vector<LatentVolume>& latents,
                      const std::string& prefix = "latent");

/// Sorted .t4d files of `dir`, masks excluded.
std::vector<std::filesystem::path> list_tensor_files(const std::filesystem::path& dir);

/// Images of `dir` with their masks attached where a mask file exists.
std::vector<CohortSample> read_cohort_dir(const std::filesystem::path& dir);
std::vector<Volume4D> read_volume_dir(const std::filesystem::path& dir);
std::vector<LatentVolume> read_latent_dir(const std::filesystem::path& dir);

}  // namespace cinegen
