#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "s2sk/grid.hpp"
#include "s2sk/tensor.hpp"

namespace s2sk {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kLatentRows = 30;
inline constexpr std::size_t kLatentCols = 60;
inline constexpr std::size_t kLatentSites = kLatentRows * kLatentCols;

enum class BookSphere { atmosphere, boundary };

struct Codebook {
  Matrix entries;  // [K, d]
  BookSphere sphere = BookSphere::atmosphere;
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(entries.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries.cols()); }

  // Entries drawn from a seeded standard normal.
  static Codebook random(std::size_t k, std::size_t d, std::uint64_t seed, BookSphere sphere);
};

struct Quantized {
  Tensor values;                    // [d, rows, cols], each site equals a codebook entry
  std::vector<std::int32_t> codes;  // [rows * cols]
};

// Nearest entry by Euclidean distance at every site; ties go to the lowest
// index. `features` has shape [d, rows, cols].
Quantized quantize(const Tensor& features, const Codebook& book);

// Mean over sites of the squared distance to the selected entry.
double codebook_loss(const Tensor& features, const Codebook& book);

// Latitude-weighted mean squared error over channels and valid cells:
// sum w_h * err^2 / sum w_h, which is E[w_h * err^2] on unmasked fields
// because the weights have mean 1.
double reconstruction_loss(const FieldSet& original, const FieldSet& reconstructed,
                           std::span<const double> lat_weights);

// Encoder/decoder pair between a channel block and the latent grid.
class Coder {
 public:
  virtual ~Coder() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t channel_count() const = 0;
  virtual const GridSpec& grid() const = 0;
  // [channels, n_lat, n_lon] -> [d, 30, 60]. Masked (NaN) cells read as 0.
  virtual Tensor encode(const Tensor& block) const = 0;
  // [d, 30, 60] -> [channels, n_lat, n_lon].
  virtual Tensor decode(const Tensor& latent) const = 0;
};

// Seeded random linear patch encoder with a pseudoinverse decoder.
//
// Grids with 30*p + 1 rows first merge the two southernmost rows by
// averaging (121 -> 120, 31 -> 30); the decoder writes the merged row back
// to both. The remaining rows/columns are cut into p x q patches, giving a
// 30 x 60 latent grid. Each patch vector of length channels*p*q is mapped to
// d features by a Gaussian matrix W with entries N(0, 1/(channels*p*q)).
class ReferenceCoder final : public Coder {
 public:
  ReferenceCoder(const GridSpec& grid, std::size_t channels, std::size_t d, std::uint64_t seed);

  std::size_t latent_dim() const override { return d_; }
  std::size_t channel_count() const override { return channels_; }
  const GridSpec& grid() const override { return grid_; }
  Tensor encode(const Tensor& block) const override;
  Tensor decode(const Tensor& latent) const override;

  std::uint64_t seed() const { return seed_; }
  bool merges_polar_rows() const { return merge_rows_; }
  const Matrix& projection() const { return w_; }
  const Matrix& pseudoinverse() const { return w_pinv_; }

 private:
  GridSpec grid_;
  std::size_t channels_;
  std::size_t d_;
  std::uint64_t seed_;
  bool merge_rows_ = false;
  std::size_t patch_rows_ = 1;
  std::size_t patch_cols_ = 1;
  Matrix w_;       // [d, P]
  Matrix w_pinv_;  // [P, d]
};

struct Stage1Options {
  bool commitment = false;
  double commitment_coef = 0.25;
};

// Reconstruction plus codebook loss for one channel block: the block is
// encoded, quantized, decoded and compared with the original. The optional
// commitment term adds coef * ||E(x) - z_q||^2 evaluated without gradients.
double stage1_loss(const FieldSet& original, const Codebook& book, const Coder& coder,
                   const Stage1Options& options = {});

struct LatentState {
  Tensor za;  // [C_ZA, 30, 60]
  Tensor zb;  // [C_ZB, 30, 60]
  std::vector<std::int32_t> codes_a;
  std::vector<std::int32_t> codes_b;
  Date valid_time{};

  // [za; zb] stacked along channels.
  Tensor stacked() const;
};

// Splits channels by sphere, encodes each block with its own coder and
// codebook. Requires at least one channel in each block.
LatentState embed(const FieldSet& x, const Coder& coder_a, const Coder& coder_b,
                  const Codebook& book_a, const Codebook& book_b);

// Inverse of embed for a stacked latent [C_ZA + C_ZB, 30, 60]; channel
// metadata (order, masks) comes from `channels`. Masked cells become NaN.
FieldSet decode_latent(const Tensor& stacked, const Coder& coder_a, const Coder& coder_b,
                       const GridSpec& grid, const std::vector<Channel>& channels, Date valid_time);

}  // namespace s2sk
