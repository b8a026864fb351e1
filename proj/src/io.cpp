#include "spect/io.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

namespace spect {

namespace {

using json = nlohmann::ordered_json;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Voxel payloads are stored little-endian; this code assumes a little-endian
// host, which covers every platform the toolkit targets.
void put_f32(std::ostream& os, const float* data, std::size_t n) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

void get_f32(std::istream& is, float* data, std::size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4)))
    throw ParseError("truncated file while reading " + what);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

void expect_magic(std::istream& is, const char* magic, const std::filesystem::path& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw ParseError("bad magic in " + path.string() + " (expected " + magic + ")");
}

}  // namespace

void write_vol1(const std::filesystem::path& path, const Volume& v) {
  if (!v.tensor().all_finite()) throw ValidationError("volume contains non-finite values: " + path.string());
  auto os = open_out(path);
  os.write("VOL1", 4);
  put_u32(os, static_cast<std::uint32_t>(v.slices()));
  put_u32(os, static_cast<std::uint32_t>(v.height()));
  put_u32(os, static_cast<std::uint32_t>(v.width()));
  put_f32(os, v.tensor().data(), static_cast<std::size_t>(v.tensor().size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Volume read_vol1(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, "VOL1", path);
  Index t = static_cast<Index>(get_u32(is, "slice count"));
  Index h = static_cast<Index>(get_u32(is, "height"));
  Index w = static_cast<Index>(get_u32(is, "width"));
  if (t <= 0 || h <= 0 || w <= 0)
    throw ParseError("non-positive dimensions in " + path.string());
  Volume v(t, h, w);
  get_f32(is, v.tensor().data(), static_cast<std::size_t>(v.tensor().size()), "voxel payload of " + path.string());
  char extra;
  if (is.read(&extra, 1)) throw ParseError("trailing bytes in " + path.string());
  if (!v.tensor().all_finite()) throw ParseError("non-finite voxel value in " + path.string());
  return v;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["dataset_id"] = m.dataset_id;
  j["class_names"] = m.class_names;
  j["filter_min_pixels"] = m.filter_min_pixels;
  j["patients"] = json::array();
  for (const auto& p : m.patients) {
    json jp;
    jp["id"] = p.id;
    jp["volume"] = p.volume_path;
    jp["age_years"] = p.age_years;
    jp["sex"] = to_string(p.sex);
    jp["stage"] = p.stage;
    j["patients"].push_back(std::move(jp));
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError("invalid JSON in " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.filter_min_pixels = j.at("filter_min_pixels").get<Index>();
    for (const auto& jp : j.at("patients")) {
      PatientRecord p;
      p.id = jp.at("id").get<std::string>();
      p.volume_path = jp.at("volume").get<std::string>();
      p.age_years = jp.at("age_years").get<double>();
      p.sex = sex_from_string(jp.at("sex").get<std::string>());
      p.stage = jp.at("stage").get<int>();
      m.patients.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + " missing or mistyped field: " + e.what());
  }
  if (m.num_classes() < 2) throw ValidationError("manifest needs at least 2 classes: " + path.string());
  for (std::size_t i = 0; i < m.class_names.size(); ++i)
    for (std::size_t k = i + 1; k < m.class_names.size(); ++k)
      if (m.class_names[i] == m.class_names[k])
        throw ValidationError("duplicate class name \"" + m.class_names[i] + "\" in " + path.string());
  if (m.filter_min_pixels <= 0) throw ValidationError("filter_min_pixels must be positive: " + path.string());
  for (const auto& p : m.patients) {
    if (p.stage < 0 || p.stage >= m.num_classes())
      throw ValidationError("patient " + p.id + " has stage " + std::to_string(p.stage) +
                            " outside [0," + std::to_string(m.num_classes()) + ")");
    if (p.age_years < 0.0 || p.age_years > 100.0)
      throw ValidationError("patient " + p.id + " has age_years outside [0,100]");
  }
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest = read_manifest(manifest_path);
  auto base = manifest_path.parent_path();
  d.volumes.reserve(d.manifest.patients.size());
  for (const auto& p : d.manifest.patients) d.volumes.push_back(read_vol1(base / p.volume_path));
  return d;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  auto os = open_out(path);
  os.write("CKPT", 4);
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<std::uint32_t>(e.value.rank()));
    for (Index d : e.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    put_f32(os, e.value.data(), static_cast<std::size_t>(e.value.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, "CKPT", path);
  std::uint32_t count = get_u32(is, "record count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ParseError("truncated name in " + path.string());
    std::uint32_t rank = get_u32(is, "rank of " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(get_u32(is, "dims of " + name));
    Tensor<float> t(shape);
    get_f32(is, t.data(), static_cast<std::size_t>(t.size()), "payload of " + name);
    out.push_back({std::move(name), std::move(t)});
  }
  char extra;
  if (is.read(&extra, 1)) throw ParseError("trailing bytes in " + path.string());
  return out;
}

CheckpointLoadReport assign_checkpoint(const std::vector<NamedTensor>& file_entries,
                                       std::vector<NamedTensor*>& destinations) {
  CheckpointLoadReport report;
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& e : file_entries) by_name[e.name] = &e;
  std::map<std::string, bool> used;
  for (auto* dst : destinations) {
    auto it = by_name.find(dst->name);
    if (it == by_name.end()) {
      report.missing.push_back(dst->name);
      continue;
    }
    if (it->second->value.shape() != dst->value.shape())
      throw ShapeError("checkpoint entry " + dst->name + " has shape " + shape_str(it->second->value.shape()) +
                       ", destination expects " + shape_str(dst->value.shape()));
    dst->value = it->second->value;
    used[dst->name] = true;
  }
  for (const auto& e : file_entries)
    if (!used.count(e.name)) report.unmatched.push_back(e.name);
  return report;
}

}  // namespace spect
