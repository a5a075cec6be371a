#include "ldiff/common.hpp"

#include <cmath>
#include <vector>

namespace ldiff {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::Stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(SplitMix64(SplitMix64(seed) ^ SplitMix64(stream + 0x632be59bd9b4e019ULL)));
}

std::uint64_t Rng::Below(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

Matrix Rng::Gaussian(Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = Normal();
  }
  return out;
}

Vector Rng::GaussianVector(Index n) {
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = Normal();
  return out;
}

double PairwiseSum(std::span<const double> values) {
  constexpr std::size_t kBlock = 32;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return PairwiseSum(values.first(half)) + PairwiseSum(values.subspan(half));
}

MeanSe MeanAndStandardError(std::span<const double> values) {
  MeanSe out;
  const std::size_t n = values.size();
  if (n == 0) return out;
  out.mean = PairwiseSum(values) / static_cast<double>(n);
  if (n == 1) return out;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = values[i] - out.mean;
    sq[i] = d * d;
  }
  const double var = PairwiseSum(sq) / static_cast<double>(n - 1);
  out.se = std::sqrt(var / static_cast<double>(n));
  return out;
}

}  // namespace ldiff
