#include "ppgauth/signal_prep.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "fft.hpp"
#include "ppgauth/error.hpp"

namespace ppgauth {

TimeSeries::TimeSeries(std::vector<double> samples, double sample_rate_hz, std::string subject_id)
    : samples_(std::move(samples)), sample_rate_hz_(sample_rate_hz), subject_id_(std::move(subject_id)) {
  if (samples_.empty()) throw InvalidArgument("TimeSeries: samples must be non-empty");
  if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_)) {
    throw InvalidArgument("TimeSeries: sample_rate_hz must be positive and finite");
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!std::isfinite(samples_[i])) {
      throw InvalidArgument("TimeSeries: non-finite sample at index " + std::to_string(i));
    }
  }
}

void PreprocessConfig::validate(double input_rate_hz) const {
  if (!(band_low_hz > 0.0 && band_low_hz < band_high_hz)) {
    throw InvalidArgument("PreprocessConfig: need 0 < band_low_hz < band_high_hz");
  }
  if (!(band_high_hz < input_rate_hz / 2.0)) {
    throw InvalidArgument("PreprocessConfig: band_high_hz must be below the input Nyquist frequency");
  }
  if (!(clip_sigma > 0.0)) throw InvalidArgument("PreprocessConfig: clip_sigma must be positive");
  if (resample_factor < 1) throw InvalidArgument("PreprocessConfig: resample_factor must be >= 1");
  if (filter_order < 1) throw InvalidArgument("PreprocessConfig: filter_order must be >= 1");
  if (smoothing_window && *smoothing_window < 1) {
    throw InvalidArgument("PreprocessConfig: smoothing_window must be >= 1");
  }
}

TimeSeries detrend(const TimeSeries& sig) {
  const auto& x = sig.samples();
  const std::size_t n = x.size();
  if (n < 2) throw InvalidArgument("detrend: need at least 2 samples");

  const double t_mean = static_cast<double>(n - 1) / 2.0;
  const double x_mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    sxy += dt * (x[i] - x_mean);
    sxx += dt * dt;
  }
  const double slope = sxy / sxx;

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] - (x_mean + slope * (static_cast<double>(i) - t_mean));
  }
  return sig.with_samples(std::move(out));
}

TimeSeries suppress_artifacts(const TimeSeries& sig, double clip_sigma) {
  if (!(clip_sigma > 0.0)) throw InvalidArgument("suppress_artifacts: clip_sigma must be positive");
  const auto& x = sig.samples();
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return sig;

  const double lo = mean - clip_sigma * sd;
  const double hi = mean + clip_sigma * sd;
  std::vector<double> out(x);
  for (double& v : out) v = std::clamp(v, lo, hi);
  return sig.with_samples(std::move(out));
}

namespace {

enum class EdgeKind { lowpass, highpass };

// Appends the digital sections of an order-n Butterworth lowpass/highpass.
void append_butterworth(std::vector<Biquad>& out, EdgeKind kind, int n, double fc, double fs) {
  using cd = std::complex<double>;
  const double warped = 2.0 * fs * std::tan(std::numbers::pi * fc / fs);
  auto to_digital = [&](cd analog_pole) { return (2.0 * fs + analog_pole) / (2.0 * fs - analog_pole); };
  auto analog_pole = [&](int k) {
    const cd proto = std::polar(1.0, std::numbers::pi * (2.0 * k + n - 1) / (2.0 * n));
    return kind == EdgeKind::lowpass ? warped * proto : warped / proto;
  };

  for (int k = 1; k <= n / 2; ++k) {
    const cd z = to_digital(analog_pole(k));
    Biquad s{};
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    if (kind == EdgeKind::lowpass) {
      const double g = (1.0 + s.a1 + s.a2) / 4.0;  // unity gain at DC
      s.b0 = g;
      s.b1 = 2.0 * g;
      s.b2 = g;
    } else {
      const double g = (1.0 - s.a1 + s.a2) / 4.0;  // unity gain at Nyquist
      s.b0 = g;
      s.b1 = -2.0 * g;
      s.b2 = g;
    }
    out.push_back(s);
  }
  if (n % 2 == 1) {
    const double p = to_digital(analog_pole((n + 1) / 2)).real();
    Biquad s{};
    s.a1 = -p;
    s.a2 = 0.0;
    if (kind == EdgeKind::lowpass) {
      const double g = (1.0 - p) / 2.0;
      s.b0 = g;
      s.b1 = g;
    } else {
      const double g = (1.0 + p) / 2.0;
      s.b0 = g;
      s.b1 = -g;
    }
    s.b2 = 0.0;
    out.push_back(s);
  }
}

// Direct form II transposed, initial state set to the steady state for a
// constant input equal to x.front().
void sosfilt_steady(const std::vector<Biquad>& sections, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const Biquad& s : sections) {
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z2 = (s.b2 - s.a2 * dc) * level;
    double z1 = (dc - s.b0) * level;
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    level *= dc;
  }
}

}  // namespace

std::vector<Biquad> design_bandpass(double low_hz, double high_hz, int order, double sample_rate_hz) {
  if (order < 1) throw InvalidArgument("bandpass: order must be positive");
  if (!(low_hz > 0.0 && low_hz < high_hz)) throw InvalidArgument("bandpass: need 0 < low_hz < high_hz");
  if (!(high_hz < sample_rate_hz / 2.0)) throw InvalidArgument("bandpass: high_hz must be below Nyquist");
  std::vector<Biquad> sections;
  append_butterworth(sections, EdgeKind::highpass, order, low_hz, sample_rate_hz);
  append_butterworth(sections, EdgeKind::lowpass, order, high_hz, sample_rate_hz);
  return sections;
}

double cascade_gain(const std::vector<Biquad>& sections, double f_hz, double sample_rate_hz) {
  const std::complex<double> zinv = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / sample_rate_hz);
  std::complex<double> h = 1.0;
  for (const Biquad& s : sections) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv * zinv) / (1.0 + s.a1 * zinv + s.a2 * zinv * zinv);
  }
  return std::abs(h);
}

TimeSeries bandpass(const TimeSeries& sig, double low_hz, double high_hz, int order) {
  const auto sections = design_bandpass(low_hz, high_hz, order, sig.sample_rate_hz());
  const auto& x = sig.samples();
  const std::size_t n = x.size();

  // Odd reflection about the end points, 3x the filter order on each side.
  const std::size_t pad = std::min<std::size_t>(3 * static_cast<std::size_t>(order), n - 1);
  std::vector<double> buf;
  buf.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) buf.push_back(2.0 * x.front() - x[i]);
  buf.insert(buf.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) buf.push_back(2.0 * x.back() - x[n - 1 - i]);

  sosfilt_steady(sections, buf);
  std::reverse(buf.begin(), buf.end());
  sosfilt_steady(sections, buf);
  std::reverse(buf.begin(), buf.end());

  return sig.with_samples(std::vector<double>(buf.begin() + static_cast<std::ptrdiff_t>(pad),
                                              buf.begin() + static_cast<std::ptrdiff_t>(pad + n)));
}

TimeSeries moving_average(const TimeSeries& sig, int window) {
  const auto& x = sig.samples();
  const std::size_t n = x.size();
  if (window < 1) throw InvalidArgument("moving_average: window must be >= 1");
  const auto w = static_cast<std::size_t>(window);
  if (w > n) throw InvalidArgument("moving_average: window exceeds signal length");
  if (w == 1) return sig;

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Window [i - w/2, i - w/2 + w - 1], truncated at the edges.
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(w / 2);
    const std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(w) - 1;
    const std::size_t a = static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0));
    const std::size_t b = static_cast<std::size_t>(std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n) - 1));
    double acc = 0.0;
    for (std::size_t j = a; j <= b; ++j) acc += x[j];
    out[i] = acc / static_cast<double>(b - a + 1);
  }
  return sig.with_samples(std::move(out));
}

TimeSeries resample_fourier(const TimeSeries& sig, int factor) {
  if (factor < 1) throw InvalidArgument("resample_fourier: factor must be >= 1");
  const double rate = sig.sample_rate_hz() * factor;
  if (factor == 1) return TimeSeries(sig.samples(), rate, sig.subject_id());

  const auto& x = sig.samples();
  const std::size_t n = x.size();
  const std::size_t m = n * static_cast<std::size_t>(factor);

  std::vector<std::complex<double>> in(x.begin(), x.end());
  const auto spec = detail::dft(in, false);

  std::vector<std::complex<double>> padded(m, {0.0, 0.0});
  const std::size_t half = n / 2;
  if (n % 2 == 0) {
    for (std::size_t k = 0; k < half; ++k) padded[k] = spec[k];
    for (std::size_t k = 1; k < half; ++k) padded[m - k] = spec[n - k];
    // Split the Nyquist bin so the padded spectrum stays conjugate-symmetric.
    padded[half] = spec[half] * 0.5;
    padded[m - half] = spec[half] * 0.5;
  } else {
    for (std::size_t k = 0; k <= half; ++k) padded[k] = spec[k];
    for (std::size_t k = 1; k <= half; ++k) padded[m - k] = spec[n - k];
  }

  const auto time = detail::dft(padded, true);
  std::vector<double> out(m);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) out[i] = time[i].real() * scale;
  return TimeSeries(std::move(out), rate, sig.subject_id());
}

TimeSeries normalize_minmax(const TimeSeries& sig) {
  const auto& x = sig.samples();
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn, hi = *mx;
  std::vector<double> out(x.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 0.5);
  } else {
    const double range = hi - lo;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / range;
  }
  return sig.with_samples(std::move(out));
}

namespace {

template <typename F>
TimeSeries run_stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

std::vector<NamedStage> preprocess_stages(const TimeSeries& sig, const PreprocessConfig& cfg) {
  run_stage("config", [&] {
    cfg.validate(sig.sample_rate_hz());
    return sig;
  });

  std::vector<NamedStage> stages;
  stages.push_back({"raw", sig});
  auto last = [&]() -> const TimeSeries& { return stages.back().signal; };

  stages.push_back({"detrended", run_stage("detrend", [&] { return detrend(last()); })});
  stages.push_back({"artifact_suppressed",
                    run_stage("suppress_artifacts", [&] { return suppress_artifacts(last(), cfg.clip_sigma); })});
  stages.push_back({"bandpassed", run_stage("bandpass", [&] {
                      return bandpass(last(), cfg.band_low_hz, cfg.band_high_hz, cfg.filter_order);
                    })});
  if (cfg.smoothing_window) {
    stages.push_back({"smoothed", run_stage("moving_average", [&] {
                        return moving_average(last(), *cfg.smoothing_window);
                      })});
  }
  stages.push_back(
      {"resampled", run_stage("resample_fourier", [&] { return resample_fourier(last(), cfg.resample_factor); })});
  stages.push_back({"normalized", run_stage("normalize_minmax", [&] { return normalize_minmax(last()); })});
  return stages;
}

TimeSeries preprocess(const TimeSeries& sig, const PreprocessConfig& cfg) {
  return preprocess_stages(sig, cfg).back().signal;
}

}  // namespace ppgauth
