#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ppgauth {

// A sampled single-channel PPG recording.
//
// Construction validates the invariants: non-empty, finite samples and a
// positive sample rate.
class TimeSeries {
 public:
  TimeSeries(std::vector<double> samples, double sample_rate_hz, std::string subject_id = {});

  const std::vector<double>& samples() const noexcept { return samples_; }
  double sample_rate_hz() const noexcept { return sample_rate_hz_; }
  const std::string& subject_id() const noexcept { return subject_id_; }
  std::size_t size() const noexcept { return samples_.size(); }
  double duration_s() const noexcept { return static_cast<double>(samples_.size()) / sample_rate_hz_; }

  // Same rate and label, new samples.
  TimeSeries with_samples(std::vector<double> samples) const {
    return TimeSeries(std::move(samples), sample_rate_hz_, subject_id_);
  }

 private:
  std::vector<double> samples_;
  double sample_rate_hz_;
  std::string subject_id_;
};

struct PreprocessConfig {
  double band_low_hz = 0.7;
  double band_high_hz = 4.0;
  double clip_sigma = 3.0;
  std::optional<int> smoothing_window;  // disabled unless set
  int resample_factor = 5;
  int filter_order = 4;

  // Throws InvalidArgument when the config cannot be applied to a signal
  // sampled at input_rate_hz.
  void validate(double input_rate_hz) const;
};

// Least-squares linear detrend.
TimeSeries detrend(const TimeSeries& sig);

// Clip to mean +/- clip_sigma * std (population std of the input).
TimeSeries suppress_artifacts(const TimeSeries& sig, double clip_sigma);

// Second-order sections of a digital IIR filter, each {b0, b1, b2, a1, a2}
// with a0 == 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

// Butterworth bandpass realised as an order-N highpass at low_hz cascaded
// with an order-N lowpass at high_hz (bilinear transform, prewarped).
std::vector<Biquad> design_bandpass(double low_hz, double high_hz, int order, double sample_rate_hz);

// Magnitude response of a section cascade at frequency f.
double cascade_gain(const std::vector<Biquad>& sections, double f_hz, double sample_rate_hz);

// Zero-phase Butterworth bandpass (forward-backward).
TimeSeries bandpass(const TimeSeries& sig, double low_hz, double high_hz, int order);

// Centered moving average; edge windows are truncated.
TimeSeries moving_average(const TimeSeries& sig, int window);

// Band-limited interpolation by zero-padding the DFT.
TimeSeries resample_fourier(const TimeSeries& sig, int factor);

// Affine map onto [0, 1]. A constant signal maps to 0.5.
TimeSeries normalize_minmax(const TimeSeries& sig);

// Full chain: detrend, artifact clipping, bandpass, optional smoothing,
// Fourier resampling, min-max normalization.
TimeSeries preprocess(const TimeSeries& sig, const PreprocessConfig& cfg);

struct NamedStage {
  std::string name;
  TimeSeries signal;
};

// Same chain as preprocess(), returning every intermediate result starting
// with the raw input. The last entry equals preprocess(sig, cfg).
std::vector<NamedStage> preprocess_stages(const TimeSeries& sig, const PreprocessConfig& cfg);

}  // namespace ppgauth
