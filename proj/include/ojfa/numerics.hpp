#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ojfa {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Builds a matrix from nested rows; all rows must share a length.
  static Matrix FromRows(const std::vector<std::vector<double>>& rows);
  static Matrix Identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::string shape() const;
  bool AllFinite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a · b with row-major accumulation (i, then p, then j). Throws on shape
// mismatch.
Matrix Matmul(const Matrix& a, const Matrix& b);
// aᵀ · b without materialising the transpose.
Matrix MatmulTransA(const Matrix& a, const Matrix& b);
// a · bᵀ without materialising the transpose.
Matrix MatmulTransB(const Matrix& a, const Matrix& b);
Matrix Transpose(const Matrix& m);

double Dot(std::span<const double> u, std::span<const double> v);
double Norm(std::span<const double> v);

// Softmax at `temperature`, max-subtracted. Throws on empty input or
// non-positive temperature.
std::vector<double> Softmax(std::span<const double> v, double temperature = 1.0);

// dot(u,v)/(|u||v|). Throws on length mismatch or a zero-norm argument.
double Cosine(std::span<const double> u, std::span<const double> v);

// Index of the maximum; ties go to the smallest index.
std::size_t Argmax(std::span<const double> v);

// Rounds to the nearest 32-bit float and back, the storage precision of
// every on-disk artifact.
inline double ToStoragePrecision(double x) {
  return static_cast<double>(static_cast<float>(x));
}
void ToStoragePrecision(Matrix& m);
void ToStoragePrecision(std::vector<double>& v);

// xoshiro256** seeded through splitmix64. Normals use Box-Muller on the raw
// stream so that draws are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t NextU64();
  // Uniform in [0, 1) with 53 bits.
  double Uniform();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t UniformInt(std::uint64_t n);
  double Normal();
  // Fresh generator for a child stream; advances this one.
  Rng Split();

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(UniformInt(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t SplitMix64(std::uint64_t& state);
// Deterministic child seed for a named sub-stream of `seed`.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream);

// 64-bit FNV-1a.
std::uint64_t Fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t h = 0xcbf29ce484222325ULL);
std::string HexDigest(std::uint64_t h);

// Runs fn(i) for i in [0, n) over up to `threads` workers. Work is split in
// contiguous blocks; callers write results by index so the outcome does not
// depend on the thread count. threads == 0 means hardware concurrency.
void ParallelFor(std::size_t n, unsigned threads,
                 const std::function<void(std::size_t)>& fn);
unsigned ResolveThreads(unsigned threads);

}  // namespace ojfa
