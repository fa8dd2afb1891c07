#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace reid {

using Vec = std::vector<double>;

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr double kCosineClamp = 1e-7;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Mat identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }

  Vec column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> v);

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// Throws InvariantViolation if any entry is NaN or infinite.
void require_finite(std::span<const double> v, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

struct Normalized {
  Vec unit;
  double norm = 0.0;
};

/// Returns v/‖v‖ together with ‖v‖. Throws ZeroNorm when ‖v‖ ≤ 1e-12.
Normalized l2_normalize(std::span<const double> v);

/// Euclidean distance. Throws DimMismatch on unequal lengths.
double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Cosine of the angle between a and b, clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// log Σ exp(l_j), evaluated with a max shift. Throws EmptyInput.
double log_sum_exp(std::span<const double> logits);

/// Softmax probabilities with the same max shift as log_sum_exp.
Vec softmax(std::span<const double> logits);

/// ln(1 + e^x) without overflow.
double softplus(double x);
double sigmoid(double x);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for each coordinate.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6);

/// max_i |a_i - b_i| / max(‖a‖_∞, ‖b‖_∞, floor). Scale-aware relative error
/// used for gradient comparisons.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-8);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace reid
