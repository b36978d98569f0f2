#include "cinegen/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cinegen {

static_assert(std::endian::native == std::endian::little,
              "T4D1 payloads are written in host order, which must be little-endian");

using nlohmann::json;

namespace {

const std::vector<std::string>& known_orders() {
  static const std::vector<std::string> orders = {"dhwt", "dhwtc", "ndhwt", "ndhwtc", "flat"};
  return orders;
}

std::size_t product(const std::vector<std::int64_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) {
    if (d < 1) throw ContainerError(ContainerError::Code::invalid, "container dims must be >= 1");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void check_payload(const json& header, std::span<const float> payload) {
  for (float v : payload)
    if (!std::isfinite(v))
      throw ContainerError(ContainerError::Code::invalid, "payload contains non-finite values");
  if (header.value("kind", std::string{}) == "mask") {
    for (float v : payload)
      if (v != 0.0F && v != 1.0F)
        throw ContainerError(ContainerError::Code::invalid,
                             "mask payload contains a value outside {0, 1}");
  }
}

json spacing_json(const Spacing& s) { return json::array({s.d, s.h, s.w, s.t}); }

Spacing spacing_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4)
    throw ContainerError(ContainerError::Code::invalid, "spacing must have 4 components");
  return {v[0], v[1], v[2], v[3]};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError(ContainerError::Code::io, "cannot open " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw ContainerError(ContainerError::Code::io, "write failed for " + path.string());
}

json latent_header(const LatentVolume& z) {
  json h;
  h["elem"] = "f32";
  h["order"] = "dhwtc";
  h["dims"] = {z.dims.d, z.dims.h, z.dims.w, z.dims.t, z.channels};
  h["spacing"] = spacing_json(z.spacing);
  h["kind"] = "latent";
  h["factor"] = z.factor;
  h["codebook_hash"] = z.codebook_hash;
  return h;
}

}  // namespace

void write_record(std::ostream& out, const json& header, std::span<const float> payload) {
  if (header.at("elem") != "f32")
    throw ContainerError(ContainerError::Code::invalid, "only f32 payloads are supported");
  if (product(header.at("dims").get<std::vector<std::int64_t>>()) != payload.size())
    throw ContainerError(ContainerError::Code::invalid, "payload length does not match dims");
  check_payload(header, payload);
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(kContainerMagic, 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size_bytes()));
}

std::optional<ContainerRecord> read_record(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() == 0) return std::nullopt;
  if (in.gcount() != 4) throw ContainerError(ContainerError::Code::truncated, "truncated magic");
  if (std::memcmp(magic, kContainerMagic, 4) != 0)
    throw ContainerError(ContainerError::Code::bad_magic,
                         "bad magic '" + std::string(magic, 4) + "', expected 'T4D1'");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (in.gcount() != 4)
    throw ContainerError(ContainerError::Code::truncated, "truncated header length");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len)
    throw ContainerError(ContainerError::Code::truncated, "truncated header");

  ContainerRecord rec;
  try {
    rec.header = json::parse(text);
  } catch (const json::exception& e) {
    throw ContainerError(ContainerError::Code::invalid, std::string("bad header: ") + e.what());
  }
  if (!rec.header.contains("elem") || !rec.header.contains("order") ||
      !rec.header.contains("dims") || !rec.header.contains("kind"))
    throw ContainerError(ContainerError::Code::invalid, "header is missing a required field");
  if (rec.header["elem"] != "f32")
    throw ContainerError(ContainerError::Code::invalid, "unsupported element type");
  const auto order = rec.header["order"].get<std::string>();
  bool known = false;
  for (const auto& o : known_orders()) known = known || o == order;
  if (!known)
    throw ContainerError(ContainerError::Code::unknown_order, "unknown axis order '" + order + "'");

  const std::size_t n = product(rec.header["dims"].get<std::vector<std::int64_t>>());
  rec.payload.resize(n);
  in.read(reinterpret_cast<char*>(rec.payload.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw ContainerError(ContainerError::Code::truncated,
                         "truncated payload: expected " + std::to_string(n) + " values");
  check_payload(rec.header, rec.payload);
  return rec;
}

void write_container(const std::filesystem::path& path, const Volume4D& v,
                     std::optional<std::uint64_t> seed) {
  v.validate();
  json h;
  h["elem"] = "f32";
  h["order"] = "dhwt";
  h["dims"] = {v.dims().d, v.dims().h, v.dims().w, v.dims().t};
  h["spacing"] = spacing_json(v.spacing());
  h["kind"] = to_string(v.kind());
  if (seed) h["seed"] = *seed;
  auto out = open_out(path);
  write_record(out, h, v.data());
  finish(out, path);
}

void write_container(const std::filesystem::path& path, const LatentVolume& z) {
  z.validate();
  auto out = open_out(path);
  write_record(out, latent_header(z), z.data);
  finish(out, path);
}

void write_container(const std::filesystem::path& path, std::span<const Volume4D> batch) {
  if (batch.empty()) throw ContainerError(ContainerError::Code::invalid, "empty batch");
  const auto& first = batch.front();
  std::vector<float> payload;
  payload.reserve(first.dims().count() * batch.size());
  for (const auto& v : batch) {
    if (!(v.dims() == first.dims()) || v.kind() != first.kind() ||
        !(v.spacing() == first.spacing()))
      throw ContainerError(ContainerError::Code::invalid, "batch members must share a layout");
    payload.insert(payload.end(), v.data().begin(), v.data().end());
  }
  json h;
  h["elem"] = "f32";
  h["order"] = "ndhwt";
  h["dims"] = {static_cast<std::int64_t>(batch.size()), first.dims().d, first.dims().h,
               first.dims().w, first.dims().t};
  h["spacing"] = spacing_json(first.spacing());
  h["kind"] = to_string(first.kind());
  auto out = open_out(path);
  write_record(out, h, payload);
  finish(out, path);
}

void write_container(const std::filesystem::path& path, std::span<const LatentVolume> batch) {
  if (batch.empty()) throw ContainerError(ContainerError::Code::invalid, "empty batch");
  const auto& first = batch.front();
  std::vector<float> payload;
  for (const auto& z : batch) {
    if (!(z.dims == first.dims) || z.channels != first.channels)
      throw ContainerError(ContainerError::Code::invalid, "batch members must share a layout");
    payload.insert(payload.end(), z.data.begin(), z.data.end());
  }
  json h = latent_header(first);
  h["order"] = "ndhwtc";
  h["dims"] = {static_cast<std::int64_t>(batch.size()), first.dims.d, first.dims.h,
               first.dims.w, first.dims.t, first.channels};
  auto out = open_out(path);
  write_record(out, h, payload);
  finish(out, path);
}

ContainerRecord read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError(ContainerError::Code::io, "cannot open " + path.string());
  auto rec = read_record(in);
  if (!rec) throw ContainerError(ContainerError::Code::truncated, "empty file " + path.string());
  return std::move(*rec);
}

Volume4D volume_from_record(const ContainerRecord& rec) {
  if (rec.order() != "dhwt")
    throw ContainerError(ContainerError::Code::invalid, "record is not a single volume");
  const auto d = rec.dims();
  if (d.size() != 4) throw ContainerError(ContainerError::Code::invalid, "volume needs 4 dims");
  Dims4 dims{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
             static_cast<int>(d[3])};
  return Volume4D(dims, spacing_from(rec.header.at("spacing")),
                  volume_kind_from_string(rec.kind()), rec.payload);
}

LatentVolume latent_from_record(const ContainerRecord& rec) {
  if (rec.order() != "dhwtc" || rec.kind() != "latent")
    throw ContainerError(ContainerError::Code::invalid, "record is not a single latent volume");
  const auto d = rec.dims();
  if (d.size() != 5) throw ContainerError(ContainerError::Code::invalid, "latent needs 5 dims");
  LatentVolume z(Dims4{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
                       static_cast<int>(d[3])},
                 static_cast<int>(d[4]));
  z.data = rec.payload;
  if (rec.header.contains("spacing")) z.spacing = spacing_from(rec.header["spacing"]);
  z.factor = rec.header.value("factor", 1);
  z.codebook_hash = rec.header.value("codebook_hash", std::string{});
  return z;
}

Volume4D read_volume(const std::filesystem::path& path) {
  return volume_from_record(read_container(path));
}

LatentVolume read_latent(const std::filesystem::path& path) {
  return latent_from_record(read_container(path));
}

std::vector<Volume4D> read_volume_batch(const std::filesystem::path& path) {
  auto rec = read_container(path);
  if (rec.order() == "dhwt") return {volume_from_record(rec)};
  if (rec.order() != "ndhwt")
    throw ContainerError(ContainerError::Code::invalid, "record is not a volume batch");
  const auto d = rec.dims();
  Dims4 dims{static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3]),
             static_cast<int>(d[4])};
  const auto spacing = spacing_from(rec.header.at("spacing"));
  const auto kind = volume_kind_from_string(rec.kind());
  std::vector<Volume4D> out;
  const std::size_t each = dims.count();
  for (std::int64_t i = 0; i < d[0]; ++i) {
    auto begin = rec.payload.begin() + static_cast<std::ptrdiff_t>(i * each);
    out.emplace_back(dims, spacing, kind,
                     std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(each)));
  }
  return out;
}

std::vector<LatentVolume> read_latent_batch(const std::filesystem::path& path) {
  auto rec = read_container(path);
  if (rec.order() == "dhwtc") return {latent_from_record(rec)};
  if (rec.order() != "ndhwtc")
    throw ContainerError(ContainerError::Code::invalid, "record is not a latent batch");
  const auto d = rec.dims();
  std::vector<LatentVolume> out;
  for (std::int64_t i = 0; i < d[0]; ++i) {
    LatentVolume z(Dims4{static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3]),
                         static_cast<int>(d[4])},
                   static_cast<int>(d[5]));
    const std::size_t each = z.numel();
    auto begin = rec.payload.begin() + static_cast<std::ptrdiff_t>(i * each);
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(each), z.data.begin());
    if (rec.header.contains("spacing")) z.spacing = spacing_from(rec.header["spacing"]);
    z.factor = rec.header.value("factor", 1);
    z.codebook_hash = rec.header.value("codebook_hash", std::string{});
    out.push_back(std::move(z));
  }
  return out;
}

void write_bundle(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  auto out = open_out(path);
  for (const auto& t : tensors) {
    json h;
    h["elem"] = "f32";
    h["order"] = "flat";
    h["dims"] = t.shape;
    h["kind"] = "param";
    h["name"] = t.name;
    write_record(out, h, t.values);
  }
  finish(out, path);
}

std::vector<NamedTensor> read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError(ContainerError::Code::io, "cannot open " + path.string());
  std::vector<NamedTensor> out;
  while (auto rec = read_record(in)) {
    NamedTensor t;
    t.name = rec->header.value("name", std::string{});
    t.shape = rec->dims();
    t.values = std::move(rec->payload);
    out.push_back(std::move(t));
  }
  return out;
}

std::string hash_floats(std::span<const float> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace cinegen
