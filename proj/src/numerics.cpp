#include "reid/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reid/errors.hpp"

namespace reid {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::MissingAttributes: return "MissingAttributes";
    case ErrorKind::SlicePlanOverflow: return "SlicePlanOverflow";
    case ErrorKind::NoValidTriplet: return "NoValidTriplet";
    case ErrorKind::BadPKShape: return "BadPKShape";
    case ErrorKind::TooFewIdentities: return "TooFewIdentities";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ConfigConflict: return "ConfigConflict";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyGalleryAfterFilter: return "EmptyGalleryAfterFilter";
    case ErrorKind::NoRelevant: return "NoRelevant";
    case ErrorKind::BadFilename: return "BadFilename";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw Error(ErrorKind::ShapeMismatch, "matrix storage does not match " + std::to_string(rows) +
                                              "x" + std::to_string(cols));
  }
  require_finite(values_, "matrix");
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec Mat::column(std::size_t c) const {
  Vec out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Mat::set_column(std::size_t c, std::span<const double> v) {
  if (v.size() != rows_) throw Error(ErrorKind::DimMismatch, "column length");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorKind::InvariantViolation, std::string("non-finite entry in ") + what);
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimMismatch, "dot product operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

Normalized l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > kNormEpsilon)) throw Error(ErrorKind::ZeroNorm, "cannot normalize a zero vector");
  Normalized out{Vec(v.begin(), v.end()), n};
  for (double& x : out.unit) x /= n;
  return out;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimMismatch, "distance operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimMismatch, "cosine operands");
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > kNormEpsilon) || !(nb > kNormEpsilon)) {
    throw Error(ErrorKind::ZeroNorm, "cosine of a zero vector");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorKind::EmptyInput, "log_sum_exp of empty input");
  const double top = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (double l : logits) acc += std::exp(l - top);
  return top + std::log(acc);
}

Vec softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  Vec p(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) p[j] = std::exp(logits[j] - lse);
  return p;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0)) throw Error(ErrorKind::OutOfRange, "finite difference step must be positive");
  Vec probe = x;
  Vec grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) throw Error(ErrorKind::DimMismatch, "gradient lengths");
  double scale = floor;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
  }
  return worst / scale;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::DimMismatch, "axpy operands");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace reid
