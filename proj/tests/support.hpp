#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "cfseg/error.hpp"
#include "cfseg/tensor.hpp"

namespace test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cfseg_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Scalar>
cfseg::Tensor<Scalar> random_tensor(const cfseg::Shape& shape, std::mt19937_64& gen, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  cfseg::Tensor<Scalar> t(shape);
  for (cfseg::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(u(gen));
  return t;
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace test

#define CHECK_ERROR_CODE(expr, expected)                     \
  do {                                                       \
    try {                                                    \
      (void)(expr);                                          \
      FAIL_CHECK("expected cfseg::Error from " #expr);       \
    } catch (const cfseg::Error& e) {                        \
      CHECK_MESSAGE(e.code() == (expected), std::string(e.what()));       \
    }                                                        \
  } while (0)
