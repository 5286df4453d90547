#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gream {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Item embeddings, one row per catalog item in item-id order.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws InputError on empty shape or any non-finite value.
  explicit EmbeddingMatrix(RowMatrix rows);

  std::size_t item_count() const { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows_.cols()); }
  const RowMatrix& rows() const { return rows_; }
  Eigen::Ref<const Vector> row(std::size_t i) const { return rows_.row(static_cast<Eigen::Index>(i)).transpose(); }

 private:
  RowMatrix rows_;
};

/// Hierarchical discrete code of one item: H semantic level codes plus a conflict code.
struct ItemIndex {
  std::vector<int> levels;
  int conflict = 0;

  std::size_t depth() const { return levels.size(); }

  /// Full token tuple (levels..., conflict).
  std::vector<int> tokens() const {
    std::vector<int> out = levels;
    out.push_back(conflict);
    return out;
  }
  static ItemIndex from_tokens(const std::vector<int>& tokens);

  friend auto operator<=>(const ItemIndex&, const ItemIndex&) = default;
  friend bool operator==(const ItemIndex&, const ItemIndex&) = default;
};

std::string to_string(const ItemIndex& index);

}  // namespace gream
