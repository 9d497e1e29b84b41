#include "ppgauth/timefreq.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ppgauth/error.hpp"

namespace ppgauth {

std::size_t SegmentationConfig::window_samples(double rate_hz) const {
  return static_cast<std::size_t>(std::llround(window_seconds * rate_hz));
}

std::size_t SegmentationConfig::hop_samples(double rate_hz) const {
  return static_cast<std::size_t>(std::llround((1.0 - overlap_ratio) * window_seconds * rate_hz));
}

void SegmentationConfig::validate(double rate_hz) const {
  if (!(window_seconds > 0.0)) throw InvalidArgument("segment: window_seconds must be positive");
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) throw InvalidArgument("segment: overlap_ratio must be in [0, 1)");
  if (window_samples(rate_hz) == 0) throw InvalidArgument("segment: window rounds to zero samples");
  if (hop_samples(rate_hz) == 0) throw InvalidArgument("segment: hop rounds to zero samples");
}

std::size_t segment_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0) throw InvalidArgument("segment_count: window and hop must be positive");
  if (length < window) return 1;
  return (length - window) / hop + 1;
}

std::vector<Segment> segment(const TimeSeries& sig, const SegmentationConfig& cfg) {
  const double rate = sig.sample_rate_hz();
  cfg.validate(rate);
  const std::size_t win = cfg.window_samples(rate);
  const std::size_t hop = cfg.hop_samples(rate);
  const auto& x = sig.samples();

  std::vector<double> taper(win, 1.0);
  if (cfg.window_fn == WindowFn::hamming && win > 1) {
    for (std::size_t i = 0; i < win; ++i) {
      taper[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win - 1));
    }
  }

  const std::size_t count = segment_count(x.size(), win, hop);
  std::vector<Segment> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Segment seg;
    seg.start_index = k * hop;
    seg.sample_rate_hz = rate;
    seg.subject_id = sig.subject_id();
    seg.samples.assign(win, 0.0);
    const std::size_t avail = std::min(win, x.size() - seg.start_index);
    for (std::size_t i = 0; i < avail; ++i) seg.samples[i] = x[seg.start_index + i] * taper[i];
    seg.padded = avail < win;
    out.push_back(std::move(seg));
  }
  return out;
}

void WaveletConfig::validate() const {
  if (!(omega0 > 0.0)) throw InvalidArgument("WaveletConfig: omega0 must be positive");
  if (!(freq_min_hz > 0.0 && freq_min_hz < freq_max_hz)) {
    throw InvalidArgument("WaveletConfig: need 0 < freq_min_hz < freq_max_hz");
  }
  if (n_scales < 2) throw InvalidArgument("WaveletConfig: n_scales must be >= 2");
}

double WaveletConfig::frequency_at(double row) const {
  const double t = row / static_cast<double>(n_scales - 1);
  if (spacing == ScaleSpacing::logarithmic) return freq_min_hz * std::pow(freq_max_hz / freq_min_hz, t);
  return freq_min_hz + t * (freq_max_hz - freq_min_hz);
}

std::vector<double> WaveletConfig::frequencies() const {
  std::vector<double> f(n_scales);
  for (std::size_t r = 0; r < n_scales; ++r) f[r] = frequency_at(static_cast<double>(r));
  return f;
}

double WaveletConfig::scale_for(double freq_hz) const { return omega0 / (2.0 * std::numbers::pi * freq_hz); }

std::complex<double> morlet(double t, double omega0) {
  static const double norm = std::pow(std::numbers::pi, -0.25);
  return norm * std::exp(-0.5 * t * t) * std::polar(1.0, omega0 * t);
}

CwtMatrix cwt(const Segment& seg, const WaveletConfig& cfg) {
  cfg.validate();
  if (seg.samples.empty()) throw InvalidArgument("cwt: empty segment");
  if (!(seg.sample_rate_hz > 0.0)) throw InvalidArgument("cwt: segment sample rate must be positive");

  const std::size_t n = seg.samples.size();
  const double dt = 1.0 / seg.sample_rate_hz;
  const double seg_len_s = static_cast<double>(n) * dt;

  CwtMatrix out;
  out.rows = cfg.n_scales;
  out.cols = n;
  out.freqs_hz = cfg.frequencies();
  out.data.assign(out.rows * out.cols, {0.0, 0.0});

  // Lags d = n_idx - tau_idx span [-(n-1), n-1].
  std::vector<std::complex<double>> atom(2 * n - 1);
  for (std::size_t r = 0; r < cfg.n_scales; ++r) {
    const double s = cfg.scale_for(out.freqs_hz[r]);
    // Effective support: +/-3 envelope widths.
    if (6.0 * s > 4.0 * seg_len_s) {
      throw InvalidArgument("cwt: scale for " + std::to_string(out.freqs_hz[r]) +
                            " Hz has support beyond 4x the segment length");
    }
    const double w = dt / std::sqrt(s);
    for (std::size_t i = 0; i < atom.size(); ++i) {
      const double lag = (static_cast<double>(i) - static_cast<double>(n - 1)) * dt;
      atom[i] = std::conj(morlet(lag / s, cfg.omega0)) * w;
    }
    auto* row = &out.data[r * n];
    for (std::size_t tau = 0; tau < n; ++tau) {
      std::complex<double> acc{0.0, 0.0};
      const std::size_t base = n - 1 - tau;
      for (std::size_t j = 0; j < n; ++j) acc += seg.samples[j] * atom[base + j];
      row[tau] = acc;
    }
  }
  return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w || src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
    throw InvalidArgument("resize_bilinear: bad dimensions");
  }
  auto coord = [](std::size_t i, std::size_t dst, std::size_t srcn) {
    if (dst == 1 || srcn == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(srcn - 1) / static_cast<double>(dst - 1);
  };
  std::vector<double> out(dst_h * dst_w);
  for (std::size_t r = 0; r < dst_h; ++r) {
    const double y = coord(r, dst_h, src_h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(y), src_h - 1);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < dst_w; ++c) {
      const double x = coord(c, dst_w, src_w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(x), src_w - 1);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
      const double bot = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
      out[r * dst_w + c] = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

Scalogram scalogram(const Segment& seg, const WaveletConfig& cfg, std::size_t out_h, std::size_t out_w) {
  if (out_h < 2 || out_w < 2) throw InvalidArgument("scalogram: output size must be at least 2x2");
  const CwtMatrix coeffs = cwt(seg, cfg);

  // Image row 0 = highest frequency.
  std::vector<double> mag(coeffs.rows * coeffs.cols);
  for (std::size_t r = 0; r < coeffs.rows; ++r) {
    const std::size_t src_row = coeffs.rows - 1 - r;
    for (std::size_t c = 0; c < coeffs.cols; ++c) mag[r * coeffs.cols + c] = std::abs(coeffs.at(src_row, c));
  }
  auto resized = resize_bilinear(mag, coeffs.rows, coeffs.cols, out_h, out_w);

  const auto [mn, mx] = std::minmax_element(resized.begin(), resized.end());
  const double lo = *mn, range = *mx - *mn;

  Scalogram img;
  img.height = out_h;
  img.width = out_w;
  img.subject_id = seg.subject_id;
  img.pixels.resize(resized.size());
  for (std::size_t i = 0; i < resized.size(); ++i) {
    img.pixels[i] = range > 0.0 ? static_cast<float>((resized[i] - lo) / range) : 0.0f;
  }
  img.freq_axis_hz.resize(out_h);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double image_row = static_cast<double>(r) * static_cast<double>(coeffs.rows - 1) / static_cast<double>(out_h - 1);
    img.freq_axis_hz[r] = cfg.frequency_at(static_cast<double>(coeffs.rows - 1) - image_row);
  }
  img.time_axis_s.resize(out_w);
  for (std::size_t c = 0; c < out_w; ++c) {
    const double sample = static_cast<double>(c) * static_cast<double>(coeffs.cols - 1) / static_cast<double>(out_w - 1);
    img.time_axis_s[c] = sample / seg.sample_rate_hz;
  }
  return img;
}

}  // namespace ppgauth
