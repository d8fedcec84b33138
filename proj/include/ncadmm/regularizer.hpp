#pragma once

#include <string>
#include <vector>

#include "prox.hpp"

namespace ncadmm {

enum class BlockKind { kL1, kNuclear };

inline const char* to_string(BlockKind k) { return k == BlockKind::kL1 ? "l1" : "nuclear"; }

/// One contiguous slice of y carrying a weighted ℓ1 or nuclear-norm penalty.
/// Nuclear blocks interpret the slice as a column-major rows×cols matrix.
struct RegularizerBlock {
  Index begin = 0;
  Index length = 0;
  BlockKind kind = BlockKind::kL1;
  double weight = 0.0;
  Index rows = 0;
  Index cols = 0;

  static RegularizerBlock l1(Index begin, Index length, double weight) {
    return {begin, length, BlockKind::kL1, weight, 0, 0};
  }
  static RegularizerBlock nuclear(Index begin, Index rows, Index cols, double weight) {
    return {begin, rows * cols, BlockKind::kNuclear, weight, rows, cols};
  }
};

/// g(y) = Σ_b g_b(y_b) over blocks partitioning [0, p).
class BlockSeparableRegularizer {
 public:
  BlockSeparableRegularizer() = default;

  BlockSeparableRegularizer(Index dim, std::vector<RegularizerBlock> blocks)
      : dim_(dim), blocks_(std::move(blocks)) {
    Index next = 0;
    for (const auto& b : blocks_) {
      if (b.begin != next) throw ConfigError("regularizer blocks must partition [0, p) in order");
      if (b.length < 0) throw ConfigError("regularizer block with negative length");
      if (!(b.weight >= 0.0)) throw ConfigError("regularizer weights must be nonnegative");
      if (b.kind == BlockKind::kNuclear && b.rows * b.cols != b.length)
        throw ConfigError("nuclear block length must equal rows*cols");
      next += b.length;
    }
    if (next != dim_) throw ConfigError("regularizer blocks must cover [0, p)");
  }

  /// ν‖y‖₁ over the whole vector.
  static BlockSeparableRegularizer l1(Index dim, double weight) {
    return BlockSeparableRegularizer(dim, {RegularizerBlock::l1(0, dim, weight)});
  }
  static BlockSeparableRegularizer zero(Index dim) { return l1(dim, 0.0); }

  Index dim() const { return dim_; }
  const std::vector<RegularizerBlock>& blocks() const { return blocks_; }

  double block_value(const RegularizerBlock& b, const Vector& y) const {
    if (b.kind == BlockKind::kL1) return b.weight * y.segment(b.begin, b.length).lpNorm<1>();
    return b.weight * nuclear_norm(as_matrix(b, y));
  }

  double value(const Vector& y) const {
    check_dim(y);
    double s = 0.0;
    for (const auto& b : blocks_) s += block_value(b, y);
    return s;
  }

  /// argmin_y g(y)/rho + ½‖y − v‖², block by block.
  Vector prox(const Vector& v, double rho) const {
    check_dim(v);
    if (!(rho > 0.0)) throw InputError("prox: rho must be positive");
    Vector out(v.size());
    for (const auto& b : blocks_) {
      const double t = b.weight / rho;
      if (b.kind == BlockKind::kL1) {
        out.segment(b.begin, b.length) = prox_l1(v.segment(b.begin, b.length), t);
      } else {
        const Matrix m = prox_nuclear(as_matrix(b, v), t);
        out.segment(b.begin, b.length) = Eigen::Map<const Vector>(m.data(), m.size());
      }
    }
    return out;
  }

  static Matrix as_matrix(const RegularizerBlock& b, const Vector& y) {
    return Eigen::Map<const Matrix>(y.data() + b.begin, b.rows, b.cols);
  }

 private:
  void check_dim(const Vector& y) const {
    if (y.size() != dim_) throw InputError("regularizer: dimension mismatch");
  }

  Index dim_ = 0;
  std::vector<RegularizerBlock> blocks_;
};

}  // namespace ncadmm
