#include "ppgauth/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ppgauth/error.hpp"

namespace ppgauth {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct ValueError {
  std::string what;
};

double to_double(const std::string& s) {
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValueError{"expected a number, got '" + s + "'"};
  }
  if (used != s.size()) throw ValueError{"expected a number, got '" + s + "'"};
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValueError{"expected a non-negative integer, got '" + s + "'"};
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValueError{"expected true or false, got '" + s + "'"};
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define PPG_DOUBLE(sec, name, member)                                                       \
  Field{sec, name, [](const RunConfig& c) { return fmt(static_cast<double>(c.member)); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_double(v); }}
#define PPG_SIZE(sec, name, member)                                                              \
  Field{sec, name, [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.member)); }, \
        [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_u64(v)); }}
#define PPG_BOOL(sec, name, member)                                 \
  Field{sec, name, [](const RunConfig& c) { return fmt(c.member); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_bool(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PPG_SIZE("data", "subjects", data.subjects),
      PPG_DOUBLE("data", "duration_s", data.duration_s),
      PPG_DOUBLE("data", "fs_hz", data.fs_hz),
      PPG_SIZE("data", "seed", data.seed),
      PPG_DOUBLE("data", "hr_min_hz", data.hr_min_hz),
      PPG_DOUBLE("data", "hr_max_hz", data.hr_max_hz),
      PPG_DOUBLE("data", "min_hr_spacing_hz", data.min_hr_spacing_hz),

      PPG_DOUBLE("preprocess", "band_low_hz", preprocess.band_low_hz),
      PPG_DOUBLE("preprocess", "band_high_hz", preprocess.band_high_hz),
      PPG_DOUBLE("preprocess", "clip_sigma", preprocess.clip_sigma),
      Field{"preprocess", "smoothing_window",
            [](const RunConfig& c) { return std::to_string(c.preprocess.smoothing_window.value_or(0)); },
            [](RunConfig& c, const std::string& v) {
              const auto w = to_u64(v);
              if (w == 0) {
                c.preprocess.smoothing_window.reset();
              } else {
                c.preprocess.smoothing_window = static_cast<int>(w);
              }
            }},
      PPG_SIZE("preprocess", "resample_factor", preprocess.resample_factor),
      PPG_SIZE("preprocess", "filter_order", preprocess.filter_order),

      PPG_DOUBLE("segmentation", "window_seconds", segmentation.window_seconds),
      PPG_DOUBLE("segmentation", "overlap_ratio", segmentation.overlap_ratio),
      Field{"segmentation", "window_fn",
            [](const RunConfig& c) {
              return std::string(c.segmentation.window_fn == WindowFn::hamming ? "hamming" : "rectangular");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "hamming") {
                c.segmentation.window_fn = WindowFn::hamming;
              } else if (v == "rectangular") {
                c.segmentation.window_fn = WindowFn::rectangular;
              } else {
                throw ValueError{"expected rectangular or hamming, got '" + v + "'"};
              }
            }},

      PPG_DOUBLE("wavelet", "omega0", wavelet.omega0),
      PPG_DOUBLE("wavelet", "freq_min_hz", wavelet.freq_min_hz),
      PPG_DOUBLE("wavelet", "freq_max_hz", wavelet.freq_max_hz),
      PPG_SIZE("wavelet", "n_scales", wavelet.n_scales),
      Field{"wavelet", "spacing",
            [](const RunConfig& c) {
              return std::string(c.wavelet.spacing == ScaleSpacing::linear ? "linear" : "log");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "log") {
                c.wavelet.spacing = ScaleSpacing::logarithmic;
              } else if (v == "linear") {
                c.wavelet.spacing = ScaleSpacing::linear;
              } else {
                throw ValueError{"expected log or linear, got '" + v + "'"};
              }
            }},

      PPG_SIZE("model", "input_size", model.input_size),
      PPG_SIZE("model", "embed_dim", model.embed_dim),
      PPG_SIZE("model", "cvt_kernel", model.cvt.kernel),
      PPG_SIZE("model", "cvt_stride1", model.cvt.stride1),
      PPG_SIZE("model", "cvt_stride2", model.cvt.stride2),
      PPG_SIZE("model", "cvt_padding", model.cvt.padding),
      PPG_SIZE("model", "cvt_embed_dim", model.cvt.embed_dim),
      PPG_SIZE("model", "cvt_heads", model.cvt.heads),
      PPG_SIZE("model", "convmixer_filters", model.convmixer.filters),
      PPG_SIZE("model", "convmixer_kernel", model.convmixer.kernel),
      PPG_SIZE("model", "convmixer_patch_kernel", model.convmixer.patch_kernel),
      PPG_SIZE("model", "convmixer_patch_stride", model.convmixer.patch_stride),
      PPG_SIZE("model", "convmixer_blocks", model.convmixer.blocks),
      PPG_SIZE("model", "convmixer_heads", model.convmixer.heads),
      PPG_SIZE("model", "lstm_hidden", model.lstm.hidden),
      PPG_BOOL("model", "lstm_bidirectional", model.lstm.bidirectional),
      PPG_BOOL("model", "branch_cvt", model.branches.cvt),
      PPG_BOOL("model", "branch_convmixer", model.branches.convmixer),
      PPG_BOOL("model", "branch_lstm", model.branches.lstm),

      PPG_SIZE("train", "epochs", train.epochs),
      PPG_SIZE("train", "batch_size", train.batch_size),
      PPG_DOUBLE("train", "learning_rate", train.learning_rate),
      PPG_DOUBLE("train", "beta1", train.beta1),
      PPG_DOUBLE("train", "beta2", train.beta2),
      PPG_DOUBLE("train", "epsilon", train.epsilon),
      PPG_SIZE("train", "seed", train.seed),
      PPG_DOUBLE("train", "train_fraction", train.train_fraction),
      PPG_SIZE("train", "patience", train.patience),

      Field{"auth", "threshold",
            [](const RunConfig& c) { return c.auth.threshold ? fmt(*c.auth.threshold) : std::string("eer"); },
            [](RunConfig& c, const std::string& v) {
              if (v == "eer") {
                c.auth.threshold.reset();
              } else {
                c.auth.threshold = to_double(v);
              }
            }},
      Field{"auth", "impostor_mode",
            [](const RunConfig& c) {
              return std::string(c.auth.impostor_mode == ImpostorMode::subjects ? "subjects" : "segments");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "segments") {
                c.auth.impostor_mode = ImpostorMode::segments;
              } else if (v == "subjects") {
                c.auth.impostor_mode = ImpostorMode::subjects;
              } else {
                throw ValueError{"expected segments or subjects, got '" + v + "'"};
              }
            }},
      PPG_SIZE("auth", "impostor_subjects", auth.impostor_subjects),

      PPG_BOOL("pipeline", "ablation", ablation),
  };
  return table;
}

#undef PPG_DOUBLE
#undef PPG_SIZE
#undef PPG_BOOL

}  // namespace

RunConfig::RunConfig() {
  train.seed = data.seed;
  train.epochs = 12;  // fits the single-core run budget; see README
}

ModelConfig RunConfig::model_for(std::size_t num_classes) const {
  ModelConfig m = model;
  m.num_classes = num_classes;
  m.lstm.steps = segmentation.window_samples(processed_rate_hz());
  return m;
}

void RunConfig::validate() const {
  data.validate();
  preprocess.validate(data.fs_hz);
  segmentation.validate(processed_rate_hz());
  wavelet.validate();
  train.validate();
  std::size_t classes = data.subjects;
  if (auth.impostor_mode == ImpostorMode::subjects) {
    if (auth.impostor_subjects == 0 || auth.impostor_subjects + 2 > data.subjects) {
      throw InvalidArgument("RunConfig: impostor_subjects must leave at least 2 enrolled subjects");
    }
    classes -= auth.impostor_subjects;
  }
  model_for(classes).validate();
  if (auth.threshold && !std::isfinite(*auth.threshold)) throw InvalidArgument("RunConfig: threshold must be finite");
}

std::string RunConfig::to_ini() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

void RunConfig::apply_ini(const std::string& text, const std::string& origin) {
  std::map<std::string, const Field*> by_name;
  for (const auto& f : fields()) by_name[f.section + "." + f.key] = &f;

  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ParseError(origin, 0, 0, e.what());
  }
  RunConfig next = *this;  // all-or-nothing
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string full = item.fullname();
    const auto it = by_name.find(full);
    if (it == by_name.end()) throw ParseError(origin, 0, 0, "unknown setting '" + full + "'");
    if (item.inputs.size() != 1) throw ParseError(origin, 0, 0, "setting '" + full + "' needs exactly one value");
    try {
      it->second->set(next, item.inputs.front());
    } catch (const ValueError& e) {
      throw ParseError(origin, 0, 0, full + ": " + e.what);
    }
  }
  *this = std::move(next);
}

RunConfig RunConfig::from_ini(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.apply_ini(text, origin);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_ini(read_file(path), path.string()); }

}  // namespace ppgauth
