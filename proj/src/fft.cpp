#include "fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <mutex>

namespace ppgauth::detail {

namespace {
// FFTW's planner is not re-entrant; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& in, bool inverse) {
  const int n = static_cast<int>(in.size());
  std::vector<std::complex<double>> out(in.size());
  if (n == 0) return out;

  fftw_complex* buf_in = fftw_alloc_complex(static_cast<size_t>(n));
  fftw_complex* buf_out = fftw_alloc_complex(static_cast<size_t>(n));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, buf_in, buf_out, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  std::memcpy(buf_in, in.data(), sizeof(fftw_complex) * static_cast<size_t>(n));
  fftw_execute(plan);
  std::memcpy(static_cast<void*>(out.data()), buf_out, sizeof(fftw_complex) * static_cast<size_t>(n));
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf_in);
  fftw_free(buf_out);
  return out;
}

}  // namespace ppgauth::detail
