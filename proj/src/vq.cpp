#include "s2sk/vq.hpp"

#include <cmath>
#include <limits>

#include "s2sk/error.hpp"
#include "s2sk/rng.hpp"

namespace s2sk {

Codebook Codebook::random(std::size_t k, std::size_t d, std::uint64_t seed, BookSphere sphere) {
  if (k == 0 || d == 0) throw ValidationError("codebook needs K >= 1 and d >= 1");
  Codebook book;
  book.entries.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  book.sphere = sphere;
  book.seed = seed;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < book.entries.size(); ++i) book.entries.data()[i] = rng.normal();
  return book;
}

namespace {

void check_features(const Tensor& features, const Codebook& book) {
  if (features.rank() != 3)
    throw ValidationError("features must have shape [d, rows, cols], got " +
                          shape_string(features.shape()));
  if (features.dim(0) != book.dim())
    throw ValidationError("feature dimension " + std::to_string(features.dim(0)) +
                          " does not match codebook dimension " + std::to_string(book.dim()));
  if (book.size() == 0) throw ValidationError("empty codebook");
}

// Index of the nearest entry and its squared distance; lowest index on ties.
std::pair<std::int32_t, double> nearest(const Tensor& features, std::size_t site,
                                        std::size_t sites, const Codebook& book) {
  const std::size_t d = book.dim();
  std::int32_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < book.size(); ++k) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = features[i * sites + site] - book.entries(static_cast<Eigen::Index>(k),
                                                                    static_cast<Eigen::Index>(i));
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<std::int32_t>(k);
    }
  }
  return {best, best_dist};
}

}  // namespace

Quantized quantize(const Tensor& features, const Codebook& book) {
  check_features(features, book);
  const std::size_t d = book.dim();
  const std::size_t sites = features.dim(1) * features.dim(2);
  Quantized out{Tensor(features.shape()), std::vector<std::int32_t>(sites)};
  for (std::size_t s = 0; s < sites; ++s) {
    const auto [code, dist] = nearest(features, s, sites, book);
    if (!std::isfinite(dist)) throw ValidationError("non-finite feature at latent site " + std::to_string(s));
    out.codes[s] = code;
    for (std::size_t i = 0; i < d; ++i) out.values[i * sites + s] = book.entries(code, static_cast<Eigen::Index>(i));
  }
  return out;
}

double codebook_loss(const Tensor& features, const Codebook& book) {
  check_features(features, book);
  const std::size_t sites = features.dim(1) * features.dim(2);
  if (sites == 0) throw ValidationError("features have no sites");
  double total = 0.0;
  for (std::size_t s = 0; s < sites; ++s) total += nearest(features, s, sites, book).second;
  return total / static_cast<double>(sites);
}

double reconstruction_loss(const FieldSet& original, const FieldSet& reconstructed,
                           std::span<const double> lat_weights) {
  require_compatible(original, reconstructed, "reconstruction loss");
  if (original.values.shape() != reconstructed.values.shape())
    throw ValidationError("reconstruction loss: shape mismatch " +
                          shape_string(original.values.shape()) + " vs " +
                          shape_string(reconstructed.values.shape()));
  const auto& g = original.grid;
  if (lat_weights.size() != g.n_lat) throw ValidationError("reconstruction loss: weight count != n_lat");
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < original.channels.size(); ++c) {
    const auto& valid = original.channels[c].valid;
    const auto a = original.channel(c);
    const auto b = reconstructed.channel(c);
    for (std::size_t i = 0; i < g.n_lat; ++i) {
      for (std::size_t j = 0; j < g.n_lon; ++j) {
        const std::size_t k = i * g.n_lon + j;
        if (valid && !(*valid)[k]) continue;
        const double e = a[k] - b[k];
        num += lat_weights[i] * e * e;
        den += lat_weights[i];
      }
    }
  }
  if (!(den > 0.0)) throw ValidationError("reconstruction loss: no weighted cells");
  return num / den;
}

ReferenceCoder::ReferenceCoder(const GridSpec& grid, std::size_t channels, std::size_t d,
                               std::uint64_t seed)
    : grid_(grid), channels_(channels), d_(d), seed_(seed) {
  grid_.validate();
  if (channels == 0 || d == 0) throw ValidationError("coder needs channels >= 1 and d >= 1");
  std::size_t rows = grid.n_lat;
  if (rows % kLatentRows == 1 && rows > kLatentRows) {
    merge_rows_ = true;
    rows -= 1;
  }
  if (rows % kLatentRows != 0 || grid.n_lon % kLatentCols != 0)
    throw ValidationError("grid " + std::to_string(grid.n_lat) + "x" + std::to_string(grid.n_lon) +
                          " cannot be patched onto the 30x60 latent grid");
  patch_rows_ = rows / kLatentRows;
  patch_cols_ = grid.n_lon / kLatentCols;
  const std::size_t p = channels_ * patch_rows_ * patch_cols_;
  w_.resize(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(p));
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  for (Eigen::Index i = 0; i < w_.size(); ++i) w_.data()[i] = scale * rng.normal();
  w_pinv_ = w_.completeOrthogonalDecomposition().pseudoInverse();
}

Tensor ReferenceCoder::encode(const Tensor& block) const {
  const Shape want{channels_, grid_.n_lat, grid_.n_lon};
  if (block.shape() != want)
    throw ValidationError("encoder input " + shape_string(block.shape()) + " expected " + shape_string(want));
  const std::size_t pr = patch_rows_, pc = patch_cols_;
  const std::size_t p = channels_ * pr * pc;
  const std::size_t last = grid_.n_lat - 1;
  auto read = [&](std::size_t c, std::size_t i, std::size_t j) {
    const double v = block.at(c, i, j);
    return std::isfinite(v) ? v : 0.0;
  };
  Matrix patches(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(kLatentSites));
  for (std::size_t li = 0; li < kLatentRows; ++li) {
    for (std::size_t lj = 0; lj < kLatentCols; ++lj) {
      const auto site = static_cast<Eigen::Index>(li * kLatentCols + lj);
      for (std::size_t c = 0; c < channels_; ++c) {
        for (std::size_t r = 0; r < pr; ++r) {
          const std::size_t i = li * pr + r;
          for (std::size_t s = 0; s < pc; ++s) {
            const std::size_t j = lj * pc + s;
            double v = read(c, i, j);
            if (merge_rows_ && i == last - 1) v = 0.5 * (v + read(c, last, j));
            patches(static_cast<Eigen::Index>((c * pr + r) * pc + s), site) = v;
          }
        }
      }
    }
  }
  Matrix features = w_ * patches;  // [d, sites]
  return Tensor({d_, kLatentRows, kLatentCols},
                std::vector<double>(features.data(), features.data() + features.size()));
}

Tensor ReferenceCoder::decode(const Tensor& latent) const {
  const Shape want{d_, kLatentRows, kLatentCols};
  if (latent.shape() != want)
    throw ValidationError("decoder input " + shape_string(latent.shape()) + " expected " + shape_string(want));
  Eigen::Map<const Matrix> features(latent.data(), static_cast<Eigen::Index>(d_),
                                    static_cast<Eigen::Index>(kLatentSites));
  const Matrix patches = w_pinv_ * features;  // [P, sites]
  const std::size_t pr = patch_rows_, pc = patch_cols_;
  const std::size_t last = grid_.n_lat - 1;
  Tensor out({channels_, grid_.n_lat, grid_.n_lon});
  for (std::size_t li = 0; li < kLatentRows; ++li) {
    for (std::size_t lj = 0; lj < kLatentCols; ++lj) {
      const auto site = static_cast<Eigen::Index>(li * kLatentCols + lj);
      for (std::size_t c = 0; c < channels_; ++c) {
        for (std::size_t r = 0; r < pr; ++r) {
          const std::size_t i = li * pr + r;
          for (std::size_t s = 0; s < pc; ++s) {
            const std::size_t j = lj * pc + s;
            const double v = patches(static_cast<Eigen::Index>((c * pr + r) * pc + s), site);
            out.at(c, i, j) = v;
            if (merge_rows_ && i == last - 1) out.at(c, last, j) = v;
          }
        }
      }
    }
  }
  return out;
}

double stage1_loss(const FieldSet& original, const Codebook& book, const Coder& coder,
                   const Stage1Options& options) {
  if (original.channels.size() != coder.channel_count())
    throw ValidationError("stage1 loss: block has " + std::to_string(original.channels.size()) +
                          " channels, coder expects " + std::to_string(coder.channel_count()));
  const Tensor features = coder.encode(original.values);
  const Quantized q = quantize(features, book);
  FieldSet recon = original;
  recon.values = coder.decode(q.values);
  const double rec = reconstruction_loss(original, recon, latitude_weights(original.grid));
  const double cb = codebook_loss(features, book);
  return rec + cb + (options.commitment ? options.commitment_coef * cb : 0.0);
}

Tensor LatentState::stacked() const {
  if (za.rank() != 3 || zb.rank() != 3) throw ValidationError("latent state is not populated");
  const std::size_t ca = za.dim(0), cb = zb.dim(0);
  std::vector<double> data;
  data.reserve(za.size() + zb.size());
  data.insert(data.end(), za.values().begin(), za.values().end());
  data.insert(data.end(), zb.values().begin(), zb.values().end());
  return Tensor({ca + cb, za.dim(1), za.dim(2)}, std::move(data));
}

LatentState embed(const FieldSet& x, const Coder& coder_a, const Coder& coder_b,
                  const Codebook& book_a, const Codebook& book_b) {
  const auto idx_a = block_channels(x.channels, false);
  const auto idx_b = block_channels(x.channels, true);
  if (idx_a.empty() || idx_b.empty())
    throw ValidationError("embed needs channels in both the atmosphere and boundary blocks");
  if (idx_a.size() != coder_a.channel_count() || idx_b.size() != coder_b.channel_count())
    throw ValidationError("embed: block sizes " + std::to_string(idx_a.size()) + "/" +
                          std::to_string(idx_b.size()) + " do not match the coders");
  const FieldSet a = select_channels(x, idx_a);
  const FieldSet b = select_channels(x, idx_b);
  Quantized qa = quantize(coder_a.encode(a.values), book_a);
  Quantized qb = quantize(coder_b.encode(b.values), book_b);
  return LatentState{std::move(qa.values), std::move(qb.values), std::move(qa.codes),
                     std::move(qb.codes), x.valid_time};
}

FieldSet decode_latent(const Tensor& stacked, const Coder& coder_a, const Coder& coder_b,
                       const GridSpec& grid, const std::vector<Channel>& channels, Date valid_time) {
  const std::size_t ca = coder_a.latent_dim(), cb = coder_b.latent_dim();
  if (stacked.shape() != Shape{ca + cb, kLatentRows, kLatentCols})
    throw ValidationError("stacked latent " + shape_string(stacked.shape()) + " does not match coders");
  const std::size_t sites = kLatentSites;
  Tensor za({ca, kLatentRows, kLatentCols},
            std::vector<double>(stacked.data(), stacked.data() + ca * sites));
  Tensor zb({cb, kLatentRows, kLatentCols},
            std::vector<double>(stacked.data() + ca * sites, stacked.data() + (ca + cb) * sites));
  const Tensor a = coder_a.decode(za);
  const Tensor b = coder_b.decode(zb);
  const auto idx_a = block_channels(channels, false);
  const auto idx_b = block_channels(channels, true);
  if (idx_a.size() != a.dim(0) || idx_b.size() != b.dim(0))
    throw ValidationError("decode: channel inventory does not match the coders");
  FieldSet out{grid, channels, Tensor({channels.size(), grid.n_lat, grid.n_lon}), valid_time};
  auto place = [&](const Tensor& src, const std::vector<std::size_t>& idx) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto dst = out.channel(idx[k]);
      const auto s = src.slab(k);
      const auto& valid = channels[idx[k]].valid;
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = (valid && !(*valid)[i]) ? std::numeric_limits<double>::quiet_NaN() : s[i];
    }
  };
  place(a, idx_a);
  place(b, idx_b);
  return out;
}

}  // namespace s2sk
