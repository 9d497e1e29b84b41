#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgauth/signal_prep.hpp"

namespace ppgauth {

// Parameters of one synthetic subject. The clean waveform is a sum of
// harmonics of heart_rate_hz plus a delayed, attenuated copy of itself (the
// dicrotic wave); drift, Gaussian noise and Poisson-timed spikes are added on
// top.
struct SyntheticSubjectSpec {
  std::string subject_id;
  double heart_rate_hz = 1.2;
  std::vector<double> harmonic_amplitudes{1.0, 0.3, 0.15};  // entry k scales harmonic k+1
  std::vector<double> harmonic_phases{0.0, 0.0, 0.0};
  double dicrotic_delay_s = 0.3;
  double dicrotic_amplitude = 0.25;
  double drift_amplitude = 0.2;
  double drift_frequency_hz = 0.05;
  double noise_sigma = 0.05;
  double artifact_rate_per_min = 2.0;
  std::uint64_t seed = 0;

  // Throws InvalidArgument.
  void validate() const;
};

// Deterministic in spec.seed.
TimeSeries generate_subject(const SyntheticSubjectSpec& spec, double duration_s, double fs_hz);

// Noise-free part of generate_subject (harmonics + dicrotic wave).
std::vector<double> clean_waveform(const SyntheticSubjectSpec& spec, double duration_s, double fs_hz);

struct CorpusConfig {
  std::size_t subjects = 8;
  double duration_s = 70.0;
  double fs_hz = 14.0;
  std::uint64_t seed = 7;
  double hr_min_hz = 0.75;
  double hr_max_hz = 1.75;
  double min_hr_spacing_hz = 0.02;

  void validate() const;
};

// Spec for subject `index` of a corpus. Heart rates are evenly spaced over
// [hr_min_hz, hr_max_hz] and snapped to the DFT bin grid of the recording;
// morphology is drawn from Rng(seed ^ index).
SyntheticSubjectSpec corpus_subject_spec(const CorpusConfig& cfg, std::size_t index);

enum class Origin { synthetic, external };

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string subject_id;
  int label = 0;
  double sample_rate_hz = 0.0;
  double duration_s = 0.0;
  Origin origin = Origin::synthetic;
};

struct DatasetManifest {
  int version = 1;
  std::vector<ManifestEntry> entries;

  std::size_t num_classes() const;
};

// Recording CSV: first line "<subject_id>,<sample_rate_hz>", then one sample
// per line.
void save_recording(const std::filesystem::path& path, const TimeSeries& sig);
TimeSeries load_recording(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
// Validates the schema, label contiguity and that every recording parses.
DatasetManifest load_manifest(const std::filesystem::path& path);
// Loads every recording of a manifest; all-or-nothing.
std::vector<TimeSeries> load_recordings(const std::filesystem::path& manifest_path, const DatasetManifest& manifest);

// Writes one CSV per subject plus manifest.json into out_dir.
DatasetManifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

// Write to a sibling temporary file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace ppgauth
