#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "tvprobe/probe.hpp"

namespace tvtest {

inline std::filesystem::path data_dir() { return TVPROBE_TEST_DATA; }

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("tvprobe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(d);
  for (auto& x : v) x = g(rng);
  return v;
}

inline std::vector<double> unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (auto& x : v) x /= s;
  return v;
}

// Random contrast pairs with labels; not normalized.
inline tvp::PairSet random_pairs(std::mt19937_64& rng, std::size_t n, std::size_t d, double offset = 0.0) {
  tvp::PairSet p;
  p.d = d;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    auto a = gaussian_vector(rng, d);
    auto b = gaussian_vector(rng, d);
    for (auto& x : a) x += offset;
    for (auto& x : b) x += offset;
    p.push_back(a, b, coin(rng), coin(rng) ? tvp::Relation::Entailment : tvp::Relation::Contradiction, i);
  }
  return p;
}

}  // namespace tvtest
