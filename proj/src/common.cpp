#include "curveclust/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace curveclust {

void FitOptions::validate() const {
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("tol must be > 0");
  if (n_init < 1) throw ConfigError("n_init must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::vector<int> SoftPartition::map_labels() const {
  std::vector<int> labels(static_cast<std::size_t>(tau.rows()));
  for (Eigen::Index i = 0; i < tau.rows(); ++i) {
    labels[static_cast<std::size_t>(i)] = argmax(tau.row(i).transpose());
  }
  return labels;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

int argmax(const Eigen::Ref<const Vector>& values) {
  int best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

double log_sum_exp(const Eigen::Ref<const Vector>& values) {
  const double hi = values.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((values.array() - hi).exp().sum());
}

double normalize_log_row(Eigen::Ref<Vector> row) {
  const double lse = log_sum_exp(row);
  if (lse == -std::numeric_limits<double>::infinity() || std::isnan(lse)) return lse;
  row = (row.array() - lse).exp();
  row /= row.sum();
  return lse;
}

double log_normal_pdf(double y, double mean, double variance) {
  const double d = y - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  const int workers = std::clamp(threads, 1, std::max(count, 1));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace curveclust
