#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ppgauth/signal_prep.hpp"

namespace ppgauth {

enum class WindowFn { rectangular, hamming };

struct SegmentationConfig {
  double window_seconds = 5.0;
  double overlap_ratio = 0.5;
  WindowFn window_fn = WindowFn::rectangular;

  // Window and hop lengths in samples at the given rate.
  std::size_t window_samples(double rate_hz) const;
  std::size_t hop_samples(double rate_hz) const;
  void validate(double rate_hz) const;
};

struct Segment {
  std::vector<double> samples;
  std::size_t start_index = 0;
  double sample_rate_hz = 0.0;
  std::string subject_id;
  bool padded = false;
};

// Number of full windows: floor((L - window) / hop) + 1 for L >= window,
// otherwise 1 (a single zero-padded segment).
std::size_t segment_count(std::size_t length, std::size_t window, std::size_t hop);

std::vector<Segment> segment(const TimeSeries& sig, const SegmentationConfig& cfg);

enum class ScaleSpacing { logarithmic, linear };

struct WaveletConfig {
  double omega0 = 6.0;  // Morlet center frequency (rad per unit scale)
  double freq_min_hz = 0.3;
  double freq_max_hz = 4.0;
  std::size_t n_scales = 64;
  ScaleSpacing spacing = ScaleSpacing::logarithmic;

  void validate() const;

  // Frequency of (fractional) scale row r; row 0 is freq_min_hz.
  double frequency_at(double row) const;
  // Rows in ascending frequency order.
  std::vector<double> frequencies() const;
  // s = omega0 / (2 pi f), in seconds.
  double scale_for(double freq_hz) const;
};

// Row-major n_scales x n_samples matrix of complex CWT coefficients. Row r
// corresponds to cfg.frequencies()[r] (ascending).
struct CwtMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::complex<double>> data;
  std::vector<double> freqs_hz;

  const std::complex<double>& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Samples of the Morlet atom pi^-1/4 exp(i w0 t) exp(-t^2/2).
std::complex<double> morlet(double t, double omega0);

// Continuous wavelet transform by direct summation with zero extension:
//   W(s, tau) = s^-1/2 sum_n x[n] conj(psi((t_n - tau)/s)) dt
CwtMatrix cwt(const Segment& seg, const WaveletConfig& cfg);

struct Scalogram {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major, row 0 is the highest frequency
  std::vector<double> freq_axis_hz;  // per image row
  std::vector<double> time_axis_s;   // per image column, relative to segment start
  std::string subject_id;

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

// Bilinear resize with corner-aligned sampling grids.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w);

// |cwt| flipped so frequency ascends bottom-to-top, bilinearly resized and
// min-max normalised to [0, 1]. A constant magnitude image maps to zeros.
Scalogram scalogram(const Segment& seg, const WaveletConfig& cfg, std::size_t out_h = 256,
                    std::size_t out_w = 256);

}  // namespace ppgauth
