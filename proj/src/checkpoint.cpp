#include "ppgauth/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"

namespace ppgauth {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'P', 'G', 'A', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

json config_to_json(const ModelConfig& c) {
  return {{"input_size", c.input_size},
          {"embed_dim", c.embed_dim},
          {"num_classes", c.num_classes},
          {"branches", {{"cvt", c.branches.cvt}, {"convmixer", c.branches.convmixer}, {"lstm", c.branches.lstm}}},
          {"cvt",
           {{"kernel", c.cvt.kernel},
            {"stride1", c.cvt.stride1},
            {"stride2", c.cvt.stride2},
            {"padding", c.cvt.padding},
            {"embed_dim", c.cvt.embed_dim},
            {"heads", c.cvt.heads}}},
          {"convmixer",
           {{"filters", c.convmixer.filters},
            {"kernel", c.convmixer.kernel},
            {"patch_kernel", c.convmixer.patch_kernel},
            {"patch_stride", c.convmixer.patch_stride},
            {"blocks", c.convmixer.blocks},
            {"heads", c.convmixer.heads}}},
          {"lstm", {{"hidden", c.lstm.hidden}, {"steps", c.lstm.steps}, {"bidirectional", c.lstm.bidirectional}}}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_size = j.at("input_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  const auto& b = j.at("branches");
  c.branches = {b.at("cvt").get<bool>(), b.at("convmixer").get<bool>(), b.at("lstm").get<bool>()};
  const auto& v = j.at("cvt");
  c.cvt.kernel = v.at("kernel").get<std::size_t>();
  c.cvt.stride1 = v.at("stride1").get<std::size_t>();
  c.cvt.stride2 = v.at("stride2").get<std::size_t>();
  c.cvt.padding = v.at("padding").get<std::size_t>();
  c.cvt.embed_dim = v.at("embed_dim").get<std::size_t>();
  c.cvt.heads = v.at("heads").get<std::size_t>();
  const auto& m = j.at("convmixer");
  c.convmixer.filters = m.at("filters").get<std::size_t>();
  c.convmixer.kernel = m.at("kernel").get<std::size_t>();
  c.convmixer.patch_kernel = m.at("patch_kernel").get<std::size_t>();
  c.convmixer.patch_stride = m.at("patch_stride").get<std::size_t>();
  c.convmixer.blocks = m.at("blocks").get<std::size_t>();
  c.convmixer.heads = m.at("heads").get<std::size_t>();
  const auto& l = j.at("lstm");
  c.lstm.hidden = l.at("hidden").get<std::size_t>();
  c.lstm.steps = l.at("steps").get<std::size_t>();
  c.lstm.bidirectional = l.at("bidirectional").get<bool>();
  return c;
}

struct Blob {
  std::string name;
  ag::Shape shape;
  std::vector<float>* values;
};

std::vector<Blob> blobs_of(HybridModel<float>& model) {
  std::vector<Blob> out;
  for (const auto& [name, t] : model.store().params()) {
    auto tt = t;  // shared handle
    out.push_back({name, t.shape(), &tt.values()});
  }
  for (const auto& [name, s] : model.store().stats()) {
    out.push_back({name + ".running_mean", {s->running_mean.size()}, &s->running_mean});
    out.push_back({name + ".running_var", {s->running_var.size()}, &s->running_var});
  }
  return out;
}

}  // namespace

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string serialize_checkpoint(const HybridModel<float>& model, std::uint64_t seed,
                                 const std::vector<std::string>& class_ids) {
  if (!class_ids.empty() && class_ids.size() != model.config().num_classes) {
    throw InvalidArgument("serialize_checkpoint: one class id per class required");
  }
  // Blob pointers are only read here.
  const auto blobs = blobs_of(const_cast<HybridModel<float>&>(model));
  json header;
  header["format_version"] = kFormatVersion;
  header["seed"] = seed;
  header["num_classes"] = model.config().num_classes;
  header["config"] = config_to_json(model.config());
  header["class_ids"] = class_ids;
  header["blobs"] = json::array();
  std::size_t offset = 0;
  for (const auto& b : blobs) {
    header["blobs"].push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
    offset += b.values->size();
  }
  const std::string hdr = header.dump();
  std::string out(kMagic, sizeof kMagic);
  const auto len = static_cast<std::uint32_t>(hdr.size());
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += hdr;
  out.reserve(out.size() + offset * 4);
  for (const auto& b : blobs) out.append(reinterpret_cast<const char*>(b.values->data()), b.values->size() * 4);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ParseError(origin, 0, 0, "not a ppgauth checkpoint");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw ParseError(origin, 0, 0, "truncated header");
  json header;
  ModelConfig cfg;
  std::uint64_t seed = 0;
  std::vector<std::string> class_ids;
  try {
    header = json::parse(bytes.substr(12, len));
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw ParseError(origin, 0, 0, "unsupported checkpoint version");
    }
    cfg = config_from_json(header.at("config"));
    seed = header.at("seed").get<std::uint64_t>();
    class_ids = header.at("class_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(origin, 0, 0, std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint ck{HybridModel<float>(cfg, seed), seed, std::move(class_ids)};
  const auto blobs = blobs_of(ck.model);
  const auto& table = header.at("blobs");
  if (table.size() != blobs.size()) throw ParseError(origin, 0, 0, "blob count does not match the architecture");
  const std::size_t data_start = 12 + len;
  std::size_t total = 0;
  for (const auto& b : blobs) total += b.values->size();
  if (bytes.size() != data_start + total * 4) throw ParseError(origin, 0, 0, "blob data size mismatch");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto& entry = table[i];
    const auto& b = blobs[i];
    if (entry.at("name").get<std::string>() != b.name || entry.at("shape").get<ag::Shape>() != b.shape) {
      throw ParseError(origin, 0, 0, "blob '" + b.name + "' does not match the architecture");
    }
    const auto off = entry.at("offset").get<std::size_t>();
    if (off + b.values->size() > total) throw ParseError(origin, 0, 0, "blob '" + b.name + "' out of range");
    std::memcpy(b.values->data(), bytes.data() + data_start + off * 4, b.values->size() * 4);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const HybridModel<float>& model, std::uint64_t seed,
                     const std::vector<std::string>& class_ids) {
  write_file_atomic(path, serialize_checkpoint(model, seed, class_ids));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

}  // namespace ppgauth
