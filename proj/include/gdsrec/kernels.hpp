#pragma once

// Forward/backward building blocks shared by the prediction path and the
// gradient engine. Not part of the stable interface.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "gdsrec/model.hpp"

namespace gdsrec::kernels {

using Mat = Eigen::MatrixXd;

enum class Side { user, item };

/// Receives gradient contributions. Dense groups accumulate into `dense`;
/// table rows are appended and merged later in a fixed order.
class GradSink {
 public:
  GradSink() = default;
  explicit GradSink(const ParamLayout& layout);

  VecMap dense_vec(Group g);
  MatMap dense_mat(Group g);
  void add_row(Group table, Index row, const Eigen::Ref<const Vec>& grad);
  void add_to(ParamBuffer& out) const;
  void clear();

 private:
  const ParamLayout* layout_ = nullptr;
  std::vector<double> dense_;
  std::vector<std::size_t> row_offsets_;
  std::vector<double> row_values_;
};

/// Everything the offset backward pass needs from its forward pass.
struct OffsetTrace {
  Side side = Side::user;
  Index node = 0;
  std::vector<Index> neighbors;   ///< item ids (user side) or user ids (item side)
  std::vector<int> diff_rows;     ///< rows of the difference table
  Mat enc_in;                     ///< n x 2D
  Mat enc_pre;                    ///< n x D, before ReLU
  Mat x;                          ///< n x D interaction vectors
  Mat att_pre;                    ///< n x D, before ReLU (empty in avg mode)
  Vec softmax;                    ///< n
  Vec eta;                        ///< n
  Eigen::Index argmax = 0;
  Vec pooled;                     ///< D
  Vec h;                          ///< D
};

/// Computes h for one node; `trace` may be null when no backward is needed.
Vec offset_forward(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                   const EpochSample& sample, Side side, Index node, OffsetTrace* trace);

void offset_backward(const ModelParams& p, const VariantFlags& flags, const OffsetTrace& trace,
                     const Vec& dh, GradSink& sink);

struct HeadTrace {
  Vec in;  ///< 2D
  Vec z1;
  Vec z2;
};

double head_forward(const ModelParams& p, const Vec& h_user, const Vec& h_item, HeadTrace* trace);

/// Accumulates head parameter gradients for upstream `d_rp` and adds the
/// offset gradients into `dh_user` / `dh_item`.
void head_backward(const ModelParams& p, const HeadTrace& trace, double d_rp, GradSink& sink, Vec& dh_user,
                   Vec& dh_item);

}  // namespace gdsrec::kernels
