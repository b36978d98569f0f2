#pragma once

// T4D1 tensor container.
//
//   bytes 0..3   magic "T4D1"
//   bytes 4..7   header length L, little-endian uint32
//   bytes 8..    L bytes of JSON header
//                {elem:"f32", order, dims, spacing?, kind, ...}
//   then         product(dims) little-endian f32 values
//
// Axis-order tags: "dhwt" (volume, t fastest), "dhwtc" (latent, channel
// fastest), "ndhwt" / "ndhwtc" (batches), "flat" (named parameter tensors).
// A bundle is several records written back to back.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/volume.hpp"

namespace cinegen {

class ContainerError : public std::runtime_error {
 public:
  enum class Code { io, bad_magic, truncated, unknown_order, invalid };
  ContainerError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] Code code() const { return code_; }

 private:
  Code code_;
};

struct ContainerRecord {
  nlohmann::json header;
  std::vector<float> payload;

  [[nodiscard]] std::string order() const { return header.at("order").get<std::string>(); }
  [[nodiscard]] std::string kind() const { return header.at("kind").get<std::string>(); }
  [[nodiscard]] std::vector<std::int64_t> dims() const {
    return header.at("dims").get<std::vector<std::int64_t>>();
  }
};

/// Named flat tensor, the unit of checkpoint bundles.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

inline constexpr char kContainerMagic[4] = {'T', '4', 'D', '1'};

void write_record(std::ostream& out, const nlohmann::json& header, std::span<const float> payload);
/// Returns nullopt at a clean end of stream.
std::optional<ContainerRecord> read_record(std::istream& in);

void write_container(const std::filesystem::path& path, const Volume4D& v,
                     std::optional<std::uint64_t> seed = std::nullopt);
void write_container(const std::filesystem::path& path, const LatentVolume& z);
void write_container(const std::filesystem::path& path, std::span<const Volume4D> batch);
void write_container(const std::filesystem::path& path, std::span<const LatentVolume> batch);

ContainerRecord read_container(const std::filesystem::path& path);
Volume4D read_volume(const std::filesystem::path& path);
LatentVolume read_latent(const std::filesystem::path& path);
std::vector<Volume4D> read_volume_batch(const std::filesystem::path& path);
std::vector<LatentVolume> read_latent_batch(const std::filesystem::path& path);

Volume4D volume_from_record(const ContainerRecord& rec);
LatentVolume latent_from_record(const ContainerRecord& rec);

void write_bundle(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_bundle(const std::filesystem::path& path);

/// FNV-1a over the raw float bytes, as 16 hex digits.
std::string hash_floats(std::span<const float> values);

}  // namespace cinegen
