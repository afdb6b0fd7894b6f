// Prints the maximal correlation of the noisy maximally entangled state as
// the noise rate sweeps 0..1, together with the aligned singular values,
// demonstrating the linear decay rho = 1 - eps.

#include <cstdio>

#include "mescalc/channels.hpp"

using namespace mescalc;

int main() {
  std::printf("%6s  %10s  %s\n", "eps", "rho", "aligned singular values");
  for (int k = 0; k <= 10; ++k) {
    double eps = 0.1 * k;
    BipartiteState psi = noisy_mes(2, eps);
    CorrelationData data = aligned_bases(psi);
    std::printf("%6.2f  %10.6f  ", eps, max_correlation(psi));
    for (long i = 0; i < data.singular_values.size(); ++i)
      std::printf("%s%.6f", i ? ", " : "", data.singular_values[i]);
    std::printf("\n");
  }

  std::printf("\nqutrit check at eps = 0.3: rho = %.6f (expected 0.7)\n",
              max_correlation(noisy_mes(3, 0.3)));
  return 0;
}
