#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ppgauth/data_io.hpp"
#include "ppgauth/hybrid_model.hpp"
#include "ppgauth/signal_prep.hpp"
#include "ppgauth/timefreq.hpp"
#include "ppgauth/train.hpp"

namespace ppgauth {

// Where impostor scores come from during evaluation.
//   segments: held-out segments of enrolled subjects scored against the
//             other subjects' templates.
//   subjects: subjects excluded from training and enrollment, scored against
//             every template.
enum class ImpostorMode { segments, subjects };

struct AuthConfig {
  std::optional<double> threshold;  // unset: calibrate at the EER
  ImpostorMode impostor_mode = ImpostorMode::segments;
  std::size_t impostor_subjects = 2;  // used by ImpostorMode::subjects
};

// Effective configuration of a run: defaults < config file < flags.
struct RunConfig {
  CorpusConfig data;
  PreprocessConfig preprocess;
  SegmentationConfig segmentation;
  WaveletConfig wavelet;
  ModelConfig model;  // num_classes and lstm.steps are derived, see model_for()
  TrainConfig train;
  AuthConfig auth;
  bool ablation = true;  // also train an LSTM-only model on the same split

  RunConfig();

  // Sample rate after resampling.
  double processed_rate_hz() const { return data.fs_hz * preprocess.resample_factor; }
  // Model config for a C-class problem; LSTM steps follow the window length.
  ModelConfig model_for(std::size_t num_classes) const;

  // Throws InvalidArgument naming the offending setting.
  void validate() const;

  // INI text with one section per component. from_ini(to_ini()) reproduces
  // the config exactly.
  std::string to_ini() const;
  // Keys absent from the text keep their current values. Unknown sections or
  // keys and malformed values throw ParseError.
  void apply_ini(const std::string& text, const std::string& origin = "<config>");

  static RunConfig from_ini(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace ppgauth
