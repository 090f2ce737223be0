#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace reefclust::detail {
namespace {

// Planning is not thread-safe in FFTW; execution with new arrays is.
std::mutex g_plan_mutex;

fftw_plan plan_for(int kind, std::size_t n) {
  static std::map<std::tuple<int, std::size_t>, fftw_plan> cache;
  std::lock_guard lock(g_plan_mutex);
  auto key = std::make_tuple(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int len = static_cast<int>(n);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan plan = nullptr;
  if (kind == 0) {
    std::vector<double> in(n);
    std::vector<std::complex<double>> out(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(len, in.data(), reinterpret_cast<fftw_complex*>(out.data()), flags);
  } else {
    std::vector<std::complex<double>> in(n), out(n);
    plan = fftw_plan_dft_1d(len, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()),
                            kind < 0 ? FFTW_FORWARD : FFTW_BACKWARD, flags);
  }
  cache.emplace(key, plan);
  return plan;
}

}  // namespace

void rfft(const double* in, std::complex<double>* out, std::size_t n) {
  fftw_execute_dft_r2c(plan_for(0, n), const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void cfft(const std::complex<double>* in, std::complex<double>* out, std::size_t n, int sign) {
  fftw_execute_dft(plan_for(sign < 0 ? -1 : 1, n),
                   reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                   reinterpret_cast<fftw_complex*>(out));
}

}  // namespace reefclust::detail
