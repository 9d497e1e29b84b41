#include "ppgauth/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <set>

#include <json.hpp>

#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"

namespace ppgauth {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {
void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}
}  // namespace

void write_matrix(const fs::path& path, std::size_t height, std::size_t width, std::span<const float> data) {
  if (height * width != data.size()) throw InvalidArgument("write_matrix: data size does not match H x W");
  if (height > UINT32_MAX || width > UINT32_MAX) throw InvalidArgument("write_matrix: dimensions exceed 32 bits");
  std::string out;
  out.reserve(8 + data.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(height));
  put_u32(out, static_cast<std::uint32_t>(width));
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  write_file_atomic(path, out);
}

FloatMatrix read_matrix(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw ParseError(path.string(), 0, 0, "truncated header");
  std::uint32_t h = 0, w = 0;
  std::memcpy(&h, bytes.data(), 4);
  std::memcpy(&w, bytes.data() + 4, 4);
  FloatMatrix m;
  m.height = h;
  m.width = w;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 8 + n * 4) {
    throw ParseError(path.string(), 0, 0,
                     "expected " + std::to_string(8 + n * 4) + " bytes, found " + std::to_string(bytes.size()));
  }
  m.data.resize(n);
  std::memcpy(m.data.data(), bytes.data() + 8, n * 4);
  return m;
}

std::size_t ArchiveIndex::num_classes() const {
  std::set<int> labels;
  for (const auto& e : entries) labels.insert(e.label);
  return labels.size();
}

void save_archive_index(const fs::path& dir, const ArchiveIndex& index) {
  json doc;
  doc["version"] = index.version;
  doc["entries"] = json::array();
  for (const auto& e : index.entries) {
    doc["entries"].push_back({{"file", e.scalogram_file},
                              {"segment_file", e.segment_file},
                              {"subject_id", e.subject_id},
                              {"label", e.label},
                              {"segment_index", e.segment_index},
                              {"start_index", e.start_index},
                              {"padded", e.padded},
                              {"sample_rate_hz", e.sample_rate_hz}});
  }
  write_file_atomic(dir / "index.json", doc.dump(2) + "\n");
}

ArchiveIndex load_archive_index(const fs::path& dir) {
  const fs::path path = dir / "index.json";
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, 0, e.what());
  }
  ArchiveIndex index;
  try {
    index.version = doc.at("version").get<int>();
    for (const auto& je : doc.at("entries")) {
      ArchiveEntry e;
      e.scalogram_file = je.at("file").get<std::string>();
      e.segment_file = je.value("segment_file", std::string{});
      e.subject_id = je.at("subject_id").get<std::string>();
      e.label = je.at("label").get<int>();
      e.segment_index = je.at("segment_index").get<std::size_t>();
      e.start_index = je.value("start_index", std::size_t{0});
      e.padded = je.at("padded").get<bool>();
      e.sample_rate_hz = je.value("sample_rate_hz", 0.0);
      index.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, 0, std::string("schema violation: ") + e.what());
  }
  if (index.version != 1) throw ParseError(path.string(), 0, 0, "unsupported archive version");
  return index;
}

}  // namespace ppgauth
