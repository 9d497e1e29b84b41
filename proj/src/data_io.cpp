#include "ppgauth/data_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ppgauth/error.hpp"
#include "ppgauth/rng.hpp"

namespace ppgauth {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Separates the morphology stream from the signal stream of a subject.
constexpr std::uint64_t kMorphologyStream = 0x9E3779B97F4A7C15ULL;

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

// Parses the whole of s as a double; false on trailing garbage.
bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

const char* origin_name(Origin o) { return o == Origin::synthetic ? "synthetic" : "external"; }

}  // namespace

void SyntheticSubjectSpec::validate() const {
  if (!(heart_rate_hz >= 0.7 && heart_rate_hz <= 1.8)) {
    throw InvalidArgument("SyntheticSubjectSpec: heart rate " + format_double(heart_rate_hz) +
                          " Hz outside [0.7, 1.8]");
  }
  if (harmonic_amplitudes.size() < 3 || harmonic_amplitudes.size() > 5) {
    throw InvalidArgument("SyntheticSubjectSpec: need 3 to 5 harmonic amplitudes");
  }
  if (harmonic_phases.size() != harmonic_amplitudes.size()) {
    throw InvalidArgument("SyntheticSubjectSpec: one phase per harmonic required");
  }
  for (double a : harmonic_amplitudes) {
    if (!finite_nonneg(a)) throw InvalidArgument("SyntheticSubjectSpec: harmonic amplitudes must be >= 0");
  }
  for (double p : harmonic_phases) {
    if (!std::isfinite(p)) throw InvalidArgument("SyntheticSubjectSpec: non-finite harmonic phase");
  }
  if (!finite_nonneg(dicrotic_delay_s) || !finite_nonneg(dicrotic_amplitude) || !finite_nonneg(drift_amplitude) ||
      !finite_nonneg(drift_frequency_hz) || !finite_nonneg(noise_sigma) || !finite_nonneg(artifact_rate_per_min)) {
    throw InvalidArgument("SyntheticSubjectSpec: delay, amplitudes, noise and artifact rate must be finite and >= 0");
  }
}

std::vector<double> clean_waveform(const SyntheticSubjectSpec& spec, double duration_s, double fs_hz) {
  spec.validate();
  if (!(duration_s > 0.0) || !(fs_hz > 0.0)) throw InvalidArgument("generate_subject: duration and rate must be > 0");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs_hz));
  if (n == 0) throw InvalidArgument("generate_subject: recording shorter than one sample");
  std::vector<double> x(n, 0.0);
  for (std::size_t k = 0; k < spec.harmonic_amplitudes.size(); ++k) {
    const double f = static_cast<double>(k + 1) * spec.heart_rate_hz;
    if (f >= fs_hz / 2.0) break;  // would alias
    const double a = spec.harmonic_amplitudes[k];
    const double phi = spec.harmonic_phases[k];
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs_hz;
      x[i] += a * std::sin(kTwoPi * f * t + phi) +
              spec.dicrotic_amplitude * a * std::sin(kTwoPi * f * (t - spec.dicrotic_delay_s) + phi);
    }
  }
  return x;
}

TimeSeries generate_subject(const SyntheticSubjectSpec& spec, double duration_s, double fs_hz) {
  std::vector<double> x = clean_waveform(spec, duration_s, fs_hz);
  const std::size_t n = x.size();

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double clean_std = std::sqrt(var / static_cast<double>(n));

  Rng rng(spec.seed);
  const double drift_phase = rng.uniform(0.0, kTwoPi);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs_hz;
    x[i] += spec.drift_amplitude * std::sin(kTwoPi * spec.drift_frequency_hz * t + drift_phase);
  }

  if (spec.artifact_rate_per_min > 0.0) {
    const double rate_per_s = spec.artifact_rate_per_min / 60.0;
    double t = rng.exponential(rate_per_s);
    while (t < duration_s) {
      const auto start = static_cast<std::size_t>(t * fs_hz);
      const std::size_t width = 1 + rng.index(3);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double amp = sign * rng.uniform(5.0, 10.0) * clean_std;
      for (std::size_t i = start; i < std::min(n, start + width); ++i) x[i] += amp;
      t += rng.exponential(rate_per_s);
    }
  }

  if (spec.noise_sigma > 0.0) {
    for (double& v : x) v += rng.normal(0.0, spec.noise_sigma);
  }
  return TimeSeries(std::move(x), fs_hz, spec.subject_id);
}

void CorpusConfig::validate() const {
  if (subjects < 2) throw InvalidArgument("CorpusConfig: need at least 2 subjects");
  if (!(duration_s > 0.0) || !(fs_hz > 0.0)) throw InvalidArgument("CorpusConfig: duration and rate must be > 0");
  if (!(hr_min_hz >= 0.7 && hr_max_hz <= 1.8 && hr_min_hz < hr_max_hz)) {
    throw InvalidArgument("CorpusConfig: heart-rate range must lie inside [0.7, 1.8] Hz");
  }
  const double spacing = (hr_max_hz - hr_min_hz) / static_cast<double>(subjects - 1);
  if (spacing < min_hr_spacing_hz) {
    throw InvalidArgument("CorpusConfig: " + std::to_string(subjects) + " subjects exceed the heart-rate capacity (" +
                          format_double(spacing) + " Hz spacing < " + format_double(min_hr_spacing_hz) + " Hz)");
  }
  // Snapping to the DFT grid must not merge neighbours.
  if (spacing <= 1.0 / duration_s) {
    throw InvalidArgument("CorpusConfig: heart-rate spacing is finer than the frequency resolution of the recording");
  }
}

SyntheticSubjectSpec corpus_subject_spec(const CorpusConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.subjects) throw InvalidArgument("corpus_subject_spec: subject index out of range");
  const double spacing = (cfg.hr_max_hz - cfg.hr_min_hz) / static_cast<double>(cfg.subjects - 1);
  const double hr = cfg.hr_min_hz + spacing * static_cast<double>(index);

  SyntheticSubjectSpec spec;
  char id[32];
  std::snprintf(id, sizeof id, "subject_%02zu", index);
  spec.subject_id = id;
  spec.heart_rate_hz = std::round(hr * cfg.duration_s) / cfg.duration_s;
  spec.seed = cfg.seed ^ static_cast<std::uint64_t>(index);

  Rng rng(spec.seed ^ kMorphologyStream);
  const std::size_t harmonics = 3 + rng.index(3);
  spec.harmonic_amplitudes.assign(harmonics, 0.0);
  spec.harmonic_phases.assign(harmonics, 0.0);
  spec.harmonic_amplitudes[0] = 1.0;
  for (std::size_t k = 1; k < harmonics; ++k) spec.harmonic_amplitudes[k] = rng.uniform(0.1, 0.4) / static_cast<double>(k);
  for (double& p : spec.harmonic_phases) p = rng.uniform(0.0, kTwoPi);
  spec.dicrotic_delay_s = rng.uniform(0.2, 0.4);
  spec.dicrotic_amplitude = rng.uniform(0.1, 0.4);
  spec.drift_amplitude = rng.uniform(0.1, 0.3);
  spec.noise_sigma = rng.uniform(0.03, 0.08);
  spec.artifact_rate_per_min = rng.uniform(1.0, 4.0);
  return spec;
}

std::size_t DatasetManifest::num_classes() const {
  std::set<int> labels;
  for (const auto& e : entries) labels.insert(e.label);
  return labels.size();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_recording(const fs::path& path, const TimeSeries& sig) {
  if (sig.subject_id().find_first_of(",\n\r") != std::string::npos) {
    throw InvalidArgument("save_recording: subject id may not contain commas or newlines");
  }
  std::string out = sig.subject_id() + "," + format_double(sig.sample_rate_hz()) + "\n";
  out.reserve(out.size() + sig.size() * 24);
  for (double v : sig.samples()) {
    out += format_double(v);
    out += '\n';
  }
  write_file_atomic(path, out);
}

TimeSeries load_recording(const fs::path& path) {
  if (!fs::exists(path)) throw Error("recording not found: " + path.string());
  const std::string text = read_file(path);
  const std::string name = path.string();

  std::size_t pos = 0, line_no = 0;
  std::string subject;
  double rate = 0.0;
  std::vector<double> samples;
  bool saw_blank = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line_no == 1) {
      const std::size_t comma = line.rfind(',');
      if (comma == std::string_view::npos) throw ParseError(name, 1, 1, "header must be '<subject_id>,<sample_rate_hz>'");
      subject = std::string(trim(line.substr(0, comma)));
      if (!parse_double(trim(line.substr(comma + 1)), rate) || !std::isfinite(rate) || rate <= 0.0) {
        throw ParseError(name, 1, comma + 2, "sample rate must be a positive number");
      }
      continue;
    }
    if (line.empty()) {
      saw_blank = true;
      continue;
    }
    if (saw_blank) throw ParseError(name, line_no - 1, 1, "blank line inside sample block");
    double v = 0.0;
    if (!parse_double(line, v)) throw ParseError(name, line_no, 1, "not a number: '" + std::string(line) + "'");
    if (!std::isfinite(v)) throw ParseError(name, line_no, 1, "non-finite sample value");
    samples.push_back(v);
  }
  if (line_no == 0) throw ParseError(name, 1, 1, "empty file");
  if (samples.empty()) throw ParseError(name, 2, 1, "no samples");
  return TimeSeries(std::move(samples), rate, subject);
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  json doc;
  doc["version"] = manifest.version;
  doc["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    doc["entries"].push_back({{"path", e.path},
                              {"subject_id", e.subject_id},
                              {"label", e.label},
                              {"sample_rate_hz", e.sample_rate_hz},
                              {"duration_s", e.duration_s},
                              {"origin", origin_name(e.origin)}});
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& path) {
  const std::string name = path.string();
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(name, 0, 0, e.what());
  }
  DatasetManifest m;
  try {
    m.version = doc.at("version").get<int>();
    if (m.version != 1) throw ParseError(name, 0, 0, "unsupported manifest version " + std::to_string(m.version));
    for (const auto& je : doc.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.subject_id = je.at("subject_id").get<std::string>();
      e.label = je.at("label").get<int>();
      e.sample_rate_hz = je.at("sample_rate_hz").get<double>();
      e.duration_s = je.at("duration_s").get<double>();
      const auto origin = je.at("origin").get<std::string>();
      if (origin == "synthetic") {
        e.origin = Origin::synthetic;
      } else if (origin == "external") {
        e.origin = Origin::external;
      } else {
        throw ParseError(name, 0, 0, "unknown origin '" + origin + "'");
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(name, 0, 0, std::string("schema violation: ") + e.what());
  }
  if (m.entries.empty()) throw ParseError(name, 0, 0, "manifest has no entries");

  std::map<int, std::string> label_to_id;
  std::map<std::string, int> id_to_label;
  for (const auto& e : m.entries) {
    auto [li, lnew] = label_to_id.emplace(e.label, e.subject_id);
    auto [ii, inew] = id_to_label.emplace(e.subject_id, e.label);
    if ((!lnew && li->second != e.subject_id) || (!inew && ii->second != e.label)) {
      throw ParseError(name, 0, 0, "subject '" + e.subject_id + "' and label " + std::to_string(e.label) +
                                       " are not in one-to-one correspondence");
    }
  }
  int expect = 0;
  for (const auto& [label, _] : label_to_id) {
    if (label != expect++) throw ParseError(name, 0, 0, "labels do not form a contiguous range [0, C)");
  }
  load_recordings(path, m);  // every file must parse
  return m;
}

std::vector<TimeSeries> load_recordings(const fs::path& manifest_path, const DatasetManifest& manifest) {
  const fs::path dir = manifest_path.parent_path();
  std::vector<TimeSeries> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    TimeSeries ts = load_recording(dir / e.path);
    if (ts.sample_rate_hz() != e.sample_rate_hz) {
      throw ParseError(manifest_path.string(), 0, 0, "sample rate of " + e.path + " disagrees with the manifest");
    }
    out.push_back(std::move(ts));
  }
  return out;
}

DatasetManifest generate_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  DatasetManifest m;
  for (std::size_t i = 0; i < cfg.subjects; ++i) {
    const SyntheticSubjectSpec spec = corpus_subject_spec(cfg, i);
    const TimeSeries ts = generate_subject(spec, cfg.duration_s, cfg.fs_hz);
    const std::string file = spec.subject_id + ".csv";
    save_recording(out_dir / file, ts);
    m.entries.push_back({file, spec.subject_id, static_cast<int>(i), cfg.fs_hz, ts.duration_s(), Origin::synthetic});
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace ppgauth
