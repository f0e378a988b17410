#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "kinject/dialog.hpp"
#include "kinject/entailment.hpp"
#include "kinject/lm.hpp"

namespace kinject::test {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(KINJECT_DATA_DIR) / name;
}

/// mt19937_64 with a Box-Muller normal so draws match across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

/// G^T G / n for an n x dim Gaussian G: positive definite almost surely when n >= dim.
inline Eigen::MatrixXd wishart(Rng& rng, Eigen::Index dim, Eigen::Index n) {
  const Eigen::MatrixXd g = rng.normal_matrix(n, dim);
  return g.transpose() * g / static_cast<double>(n);
}

/// ||a - n|| / max(||a||, ||n||, 1e-8) over the whole checked vector.
inline double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

inline constexpr double kFdEpsilon = 1e-4;

/// Central differences of f with respect to every entry of x.
inline RowMatrix numeric_gradient(const std::function<double(const RowMatrix&)>& f, const RowMatrix& x,
                                  double eps = kFdEpsilon) {
  RowMatrix g(x.rows(), x.cols());
  RowMatrix probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + eps;
      const double up = f(probe);
      probe(i, j) = orig - eps;
      const double down = f(probe);
      probe(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

inline Eigen::VectorXd flatten(const RowMatrix& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

/// Random LM with weights drawn at `scale`, large enough for non-trivial gradients.
inline LMParams random_params(std::size_t vocab, std::size_t hidden, std::uint64_t seed, double scale = 0.5) {
  LMParams p(vocab, hidden);
  Rng rng(seed);
  for (double& v : p.values()) v = scale * rng.normal();
  return p;
}

inline TokenIds random_tokens(Rng& rng, std::size_t vocab, std::size_t length) {
  TokenIds ids(length);
  for (auto& t : ids) t = static_cast<TokenId>(rng.index(vocab));
  return ids;
}

inline RowMatrix random_states(Rng& rng, std::size_t rows, std::size_t cols, double scale = 0.5) {
  RowMatrix z(rows, cols);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = scale * rng.normal();
  return z;
}

inline EntailmentHead random_head(Rng& rng, std::size_t hidden, double scale = 0.5) {
  EntailmentHead h = EntailmentHead::zeros(hidden);
  for (Eigen::Index i = 0; i < h.response_weights.size(); ++i) h.response_weights(i) = scale * rng.normal();
  for (Eigen::Index i = 0; i < h.history_weights.size(); ++i) h.history_weights(i) = scale * rng.normal();
  h.bias = scale * rng.normal();
  return h;
}

/// The bundled trained model, loaded once per process.
inline const LanguageModel& trained_model() {
  static const LanguageModel lm = LanguageModel::load(data_path("vocab.txt"), data_path("lm.bin"));
  return lm;
}

inline const EntailmentHead& trained_head() {
  static const EntailmentHead head =
      EntailmentHead::load(data_path("head.bin"), trained_model().params.hidden_size());
  return head;
}

inline const std::vector<DialogHistory>& fixture_dialogs() {
  static const std::vector<DialogHistory> dialogs = read_dialog_file(data_path("fixture_dialogs.jsonl")).dialogs;
  return dialogs;
}

/// Temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("kinject_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace kinject::test
