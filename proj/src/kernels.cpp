#include "gdsrec/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace gdsrec::kernels {

GradSink::GradSink(const ParamLayout& layout) : layout_(&layout), dense_(layout.dense_size(), 0.0) {}

VecMap GradSink::dense_vec(Group g) {
  const auto& info = (*layout_)[g];
  return {dense_.data() + info.offset, static_cast<Eigen::Index>(info.size())};
}

MatMap GradSink::dense_mat(Group g) {
  const auto& info = (*layout_)[g];
  return {dense_.data() + info.offset, static_cast<Eigen::Index>(info.rows), static_cast<Eigen::Index>(info.cols)};
}

void GradSink::add_row(Group table, Index row, const Eigen::Ref<const Vec>& grad) {
  const auto& info = (*layout_)[table];
  row_offsets_.push_back(info.offset + static_cast<std::size_t>(row) * info.cols);
  row_values_.insert(row_values_.end(), grad.data(), grad.data() + grad.size());
}

void GradSink::add_to(ParamBuffer& out) const {
  for (std::size_t k = 0; k < dense_.size(); ++k) out.dense[k] += dense_[k];
  const auto d = static_cast<std::size_t>(layout_->shape().dim);
  for (std::size_t r = 0; r < row_offsets_.size(); ++r) {
    double* dst = out.tables.data() + row_offsets_[r];
    const double* src = row_values_.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
}

void GradSink::clear() {
  std::fill(dense_.begin(), dense_.end(), 0.0);
  row_offsets_.clear();
  row_values_.clear();
}

namespace {

struct SideGroups {
  Group neighbor_embed, context_embed;
  Group enc_w1, enc_b1, enc_w2, enc_b2;
  Group att_w1, att_b1, att_w2, att_b2;
  Group agg_w, agg_b;
};

constexpr SideGroups kUserSide{Group::item_embed, Group::user_embed, Group::enc_user_w1, Group::enc_user_b1,
                               Group::enc_user_w2, Group::enc_user_b2, Group::att_user_w1, Group::att_user_b1,
                               Group::att_user_w2, Group::att_user_b2, Group::agg_user_w, Group::agg_user_b};
constexpr SideGroups kItemSide{Group::user_embed, Group::item_embed, Group::enc_item_w1, Group::enc_item_b1,
                               Group::enc_item_w2, Group::enc_item_b2, Group::att_item_w1, Group::att_item_b1,
                               Group::att_item_w2, Group::att_item_b2, Group::agg_item_w, Group::agg_item_b};

const SideGroups& groups_for(Side side) { return side == Side::user ? kUserSide : kItemSide; }

template <class Edges>
void gather(const Edges& row, std::span<const std::uint32_t> kept, bool raw, std::vector<Index>& ids,
            std::vector<int>& diff_rows) {
  ids.resize(kept.size());
  diff_rows.resize(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto& e = row[kept[k]];
    if constexpr (requires { e.item; })
      ids[k] = e.item;
    else
      ids[k] = e.user;
    diff_rows[k] = raw ? e.rating - 1 : e.level;
  }
}

}  // namespace

Vec offset_forward(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                   const EpochSample& sample, Side side, Index node, OffsetTrace* trace) {
  const auto& sg = groups_for(side);
  const Eigen::Index d = p.dim();

  OffsetTrace local;
  OffsetTrace& t = trace ? *trace : local;
  t.side = side;
  t.node = node;
  if (side == Side::user)
    gather(g.user_view[static_cast<std::size_t>(node)], sample.user_items(node), flags.rd_raw, t.neighbors, t.diff_rows);
  else
    gather(g.item_view[static_cast<std::size_t>(node)], sample.item_users(node), flags.rd_raw, t.neighbors, t.diff_rows);

  const auto n = static_cast<Eigen::Index>(t.neighbors.size());
  t.pooled = Vec::Zero(d);
  if (n > 0) {
    t.enc_in.resize(n, 2 * d);
    for (Eigen::Index k = 0; k < n; ++k) {
      t.enc_in.row(k).head(d) = p.row(sg.neighbor_embed, t.neighbors[static_cast<std::size_t>(k)]).transpose();
      t.enc_in.row(k).tail(d) = p.row(Group::diff_embed, t.diff_rows[static_cast<std::size_t>(k)]).transpose();
    }
    t.enc_pre = t.enc_in * p.mat(sg.enc_w1).transpose();
    t.enc_pre.rowwise() += p.vec(sg.enc_b1).transpose();
    t.x = t.enc_pre.cwiseMax(0.0) * p.mat(sg.enc_w2).transpose();
    t.x.rowwise() += p.vec(sg.enc_b2).transpose();

    if (flags.attention == AttentionMode::uniform_avg) {
      t.softmax = Vec::Constant(n, 1.0 / static_cast<double>(n));
      t.eta = t.softmax;
      t.att_pre.resize(0, 0);
    } else {
      const auto a1 = p.mat(sg.att_w1);
      const Vec context_term = a1.rightCols(d) * p.row(sg.context_embed, node) + p.vec(sg.att_b1);
      t.att_pre = t.x * a1.leftCols(d).transpose();
      t.att_pre.rowwise() += context_term.transpose();
      Vec scores = t.att_pre.cwiseMax(0.0) * p.vec(sg.att_w2);
      scores.array() += p.vec(sg.att_b2)(0);
      const double top = scores.maxCoeff();
      t.softmax = (scores.array() - top).exp();
      t.softmax /= t.softmax.sum();
      if (flags.attention == AttentionMode::max) {
        const double m = t.softmax.maxCoeff(&t.argmax);
        t.eta = Vec::Constant(n, m);
      } else {
        t.eta = t.softmax;
      }
    }
    t.pooled = t.x.transpose() * t.eta;
  }
  t.h = (p.mat(sg.agg_w) * t.pooled + p.vec(sg.agg_b)).array().tanh();
  return t.h;
}

void offset_backward(const ModelParams& p, const VariantFlags& flags, const OffsetTrace& t, const Vec& dh,
                     GradSink& sink) {
  const auto& sg = groups_for(t.side);
  const Eigen::Index d = p.dim();

  const Vec da = dh.array() * (1.0 - t.h.array().square());
  sink.dense_mat(sg.agg_w).noalias() += da * t.pooled.transpose();
  sink.dense_vec(sg.agg_b) += da;
  const auto n = static_cast<Eigen::Index>(t.neighbors.size());
  if (n == 0) return;

  const Vec d_pooled = p.mat(sg.agg_w).transpose() * da;
  Mat dx = t.eta * d_pooled.transpose();

  if (flags.attention != AttentionMode::uniform_avg) {
    const Vec d_eta = t.x * d_pooled;
    Vec d_score;
    if (flags.attention == AttentionMode::softmax) {
      d_score = t.softmax.array() * (d_eta.array() - t.softmax.dot(d_eta));
    } else {
      // every weight equals softmax[argmax]; only that entry carries gradient
      const double d_top = d_eta.sum();
      const double s_top = t.softmax(t.argmax);
      d_score = -d_top * s_top * t.softmax;
      d_score(t.argmax) += d_top * s_top;
    }

    const Mat relu_att = t.att_pre.cwiseMax(0.0);
    sink.dense_vec(sg.att_w2).noalias() += relu_att.transpose() * d_score;
    sink.dense_vec(sg.att_b2)(0) += d_score.sum();
    const Mat d_att_pre =
        ((d_score * p.vec(sg.att_w2).transpose()).array() * (t.att_pre.array() > 0.0).cast<double>()).matrix();
    const Vec d_att_pre_sum = d_att_pre.colwise().sum().transpose();
    auto d_a1 = sink.dense_mat(sg.att_w1);
    d_a1.leftCols(d).noalias() += d_att_pre.transpose() * t.x;
    d_a1.rightCols(d).noalias() += d_att_pre_sum * p.row(sg.context_embed, t.node).transpose();
    sink.dense_vec(sg.att_b1) += d_att_pre_sum;
    const auto a1 = p.mat(sg.att_w1);
    dx.noalias() += d_att_pre * a1.leftCols(d);
    const Vec d_context = a1.rightCols(d).transpose() * d_att_pre_sum;
    sink.add_row(sg.context_embed, t.node, d_context);
  }

  const Mat hidden = t.enc_pre.cwiseMax(0.0);
  sink.dense_mat(sg.enc_w2).noalias() += dx.transpose() * hidden;
  sink.dense_vec(sg.enc_b2) += dx.colwise().sum().transpose();
  const Mat d_pre = ((dx * p.mat(sg.enc_w2)).array() * (t.enc_pre.array() > 0.0).cast<double>()).matrix();
  sink.dense_mat(sg.enc_w1).noalias() += d_pre.transpose() * t.enc_in;
  sink.dense_vec(sg.enc_b1) += d_pre.colwise().sum().transpose();
  const Mat d_in = d_pre * p.mat(sg.enc_w1);
  for (Eigen::Index k = 0; k < n; ++k) {
    sink.add_row(sg.neighbor_embed, t.neighbors[static_cast<std::size_t>(k)], d_in.row(k).head(d).transpose());
    sink.add_row(Group::diff_embed, t.diff_rows[static_cast<std::size_t>(k)], d_in.row(k).tail(d).transpose());
  }
}

double head_forward(const ModelParams& p, const Vec& h_user, const Vec& h_item, HeadTrace* trace) {
  const Eigen::Index d = p.dim();
  Vec in(2 * d);
  in << h_user, h_item;
  Vec z1 = (p.mat(Group::head_w1) * in + p.vec(Group::head_b1)).array().tanh();
  Vec z2 = (p.mat(Group::head_w2) * z1 + p.vec(Group::head_b2)).array().tanh();
  const double rp = p.vec(Group::head_w).dot(z2);
  if (trace) {
    trace->in = std::move(in);
    trace->z1 = std::move(z1);
    trace->z2 = std::move(z2);
  }
  return rp;
}

void head_backward(const ModelParams& p, const HeadTrace& t, double d_rp, GradSink& sink, Vec& dh_user,
                   Vec& dh_item) {
  const Eigen::Index d = p.dim();
  sink.dense_vec(Group::head_w) += d_rp * t.z2;
  const Vec d_a2 = (d_rp * p.vec(Group::head_w)).array() * (1.0 - t.z2.array().square());
  sink.dense_mat(Group::head_w2).noalias() += d_a2 * t.z1.transpose();
  sink.dense_vec(Group::head_b2) += d_a2;
  const Vec d_a1 = (p.mat(Group::head_w2).transpose() * d_a2).array() * (1.0 - t.z1.array().square());
  sink.dense_mat(Group::head_w1).noalias() += d_a1 * t.in.transpose();
  sink.dense_vec(Group::head_b1) += d_a1;
  const Vec d_in = p.mat(Group::head_w1).transpose() * d_a1;
  dh_user += d_in.head(d);
  dh_item += d_in.tail(d);
}

}  // namespace gdsrec::kernels
