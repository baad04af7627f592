#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guardrl/corpus.hpp"
#include "guardrl/policy.hpp"
#include "guardrl/random.hpp"

namespace guardrl::testing {

inline ToyPolicy random_policy(PolicyShape shape, std::uint64_t seed, double scale = 0.7) {
  ToyPolicy p(shape);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.parameter_count(); ++i) p.parameters()(i) = scale * rng.normal();
  return p;
}

struct GradCheck {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

/// Central differences on `count` random coordinates. Coordinates whose
/// analytic and numeric derivatives are both below 1e-10 count as exact.
inline GradCheck check_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
                                std::size_t count, std::uint64_t seed, double h = 1e-5) {
  GradCheck out;
  Rng rng(seed);
  Eigen::VectorXd probe = theta;
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(theta.size())));
    probe(i) = theta(i) + h;
    const double up = f(probe);
    probe(i) = theta(i) - h;
    const double down = f(probe);
    probe(i) = theta(i);
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic(i)));
    const double rel = scale < 1e-10 ? 0.0 : std::abs(numeric - analytic(i)) / scale;
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.coordinates;
  }
  return out;
}

/// Fresh empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)) ^
            static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
    path_ = std::filesystem::temp_directory_path() / ("guardrl_" + tag + "_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Sample text_sample(std::string id, std::string request, SafetyLabel req,
                          std::optional<std::string> response = std::nullopt,
                          std::optional<SafetyLabel> res = std::nullopt) {
  Sample s;
  s.id = std::move(id);
  s.request_text = std::move(request);
  s.victim_response = std::move(response);
  s.truth = GroundTruth{req, res};
  s.source = "unit";
  return s;
}

}  // namespace guardrl::testing
