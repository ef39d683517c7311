#include "fedrank/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace fedrank {

namespace {

constexpr double kGeluC0 = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

inline double gelu_forward(double x) {
  double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_backward(double x) {
  double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  double t = std::tanh(u);
  double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// Stable softmax of one row, in place over out[0..n).
inline void softmax_row(const double* in, double* out, std::size_t n) {
  double m = in[0];
  for (std::size_t i = 1; i < n; ++i)
    if (in[i] > m) m = in[i];
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = std::exp(in[i] - m);
    out[i] = e;
    sum += e;
  }
  double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

}  // namespace

std::size_t Tape::alloc(std::size_t n) {
  std::size_t off = vals_.size();
  vals_.resize(off + n, 0.0);
  return off;
}

std::size_t Tape::alloc_save(std::size_t n) {
  std::size_t off = save_.size();
  save_.resize(off + n, 0.0);
  return off;
}

Tape::VarId Tape::push(Op op, std::uint8_t rank, std::size_t rows, std::size_t cols) {
  Node n;
  n.op = op;
  n.rank = rank;
  n.rows = rows;
  n.cols = cols;
  n.len = (rank == 0 ? 1 : (rank == 1 ? cols : rows * cols));
  n.off = alloc(n.len);
  nodes_.push_back(n);
  return static_cast<VarId>(nodes_.size() - 1);
}

void Tape::check_exists(VarId id, const char* who) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw DimensionError(std::string(who) + ": invalid operand id");
}

Tensor Tape::make_tensor(VarId id, const std::vector<double>& arena) const {
  const Node& n = nodes_[id];
  std::vector<std::size_t> shape;
  if (n.rank == 1)
    shape = {n.cols};
  else if (n.rank == 2)
    shape = {n.rows, n.cols};
  else
    shape = {1};
  std::vector<double> v(arena.begin() + n.off, arena.begin() + n.off + n.len);
  return Tensor{std::move(shape), std::move(v)};
}

void Tape::reset() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  save_.clear();
  aux_.clear();
}

Tape::VarId Tape::leaf(const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 2)
    throw DimensionError("leaf: only rank-1/2 tensors are supported, got " + t.shape_str());
  std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  std::size_t rows = rank == 2 ? t.shape[0] : 1;
  std::size_t cols = t.shape.back();
  VarId id = push(Op::kLeaf, rank, rows, cols);
  std::memcpy(vals_.data() + nodes_[id].off, t.values.data(), t.size() * sizeof(double));
  return id;
}

Tape::VarId Tape::linear(VarId x, VarId W, VarId b) {
  check_exists(x, "linear");
  check_exists(W, "linear");
  const Node& nx = nodes_[x];
  const Node& nw = nodes_[W];
  if (nw.rank != 2 || nw.cols != nx.cols)
    throw DimensionError("linear: x " + value_tensor(x).shape_str() + " does not match W " +
                         value_tensor(W).shape_str());
  std::size_t d_out = nw.rows;
  if (b >= 0) {
    const Node& nb = nodes_[b];
    if (nb.len != d_out)
      throw DimensionError("linear: b " + value_tensor(b).shape_str() + " does not match W " +
                           value_tensor(W).shape_str());
  }
  VarId id = push(Op::kLinear, nx.rank, nx.rows, d_out);
  Node& n = nodes_[id];
  n.in0 = x;
  n.in1 = W;
  n.in2 = b;
  const std::size_t rows = nx.rows, d_in = nx.cols;
  const double* xp = vals_.data() + nodes_[x].off;
  const double* wp = vals_.data() + nodes_[W].off;
  const double* bp = b >= 0 ? vals_.data() + nodes_[b].off : nullptr;
  double* yp = vals_.data() + n.off;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * d_in;
    double* yr = yp + r * d_out;
    for (std::size_t o = 0; o < d_out; ++o) {
      const double* wr = wp + o * d_in;
      double acc = 0.0;
      for (std::size_t i = 0; i < d_in; ++i) acc += wr[i] * xr[i];
      yr[o] = bp ? acc + bp[o] : acc;
    }
  }
  return id;
}

Tape::VarId Tape::add(VarId a, VarId b) {
  check_exists(a, "add");
  check_exists(b, "add");
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.len != nb.len || na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("add: shape mismatch " + value_tensor(a).shape_str() + " vs " +
                         value_tensor(b).shape_str());
  VarId id = push(Op::kAdd, na.rank, na.rows, na.cols);
  Node& n = nodes_[id];
  n.in0 = a;
  n.in1 = b;
  const double* ap = vals_.data() + nodes_[a].off;
  const double* bp = vals_.data() + nodes_[b].off;
  double* yp = vals_.data() + n.off;
  for (std::size_t i = 0; i < n.len; ++i) yp[i] = ap[i] + bp[i];
  return id;
}

Tape::VarId Tape::scale(VarId a, double c) {
  check_exists(a, "scale");
  const Node& na = nodes_[a];
  VarId id = push(Op::kScale, na.rank, na.rows, na.cols);
  Node& n = nodes_[id];
  n.in0 = a;
  n.scalar = c;
  const double* ap = vals_.data() + nodes_[a].off;
  double* yp = vals_.data() + n.off;
  for (std::size_t i = 0; i < n.len; ++i) yp[i] = c * ap[i];
  return id;
}

Tape::VarId Tape::softmax_rows(VarId x) {
  check_exists(x, "softmax");
  const Node& nx = nodes_[x];
  VarId id = push(Op::kSoftmax, nx.rank, nx.rows, nx.cols);
  Node& n = nodes_[id];
  n.in0 = x;
  const double* xp = vals_.data() + nodes_[x].off;
  double* yp = vals_.data() + n.off;
  for (std::size_t r = 0; r < n.rows; ++r)
    softmax_row(xp + r * n.cols, yp + r * n.cols, n.cols);
  return id;
}

Tape::VarId Tape::layer_norm(VarId x, VarId gain, VarId bias) {
  check_exists(x, "layer_norm");
  check_exists(gain, "layer_norm");
  check_exists(bias, "layer_norm");
  const Node& nx = nodes_[x];
  if (nodes_[gain].len != nx.cols || nodes_[bias].len != nx.cols)
    throw DimensionError("layer_norm: gain/bias do not match x " + value_tensor(x).shape_str());
  VarId id = push(Op::kLayerNorm, nx.rank, nx.rows, nx.cols);
  Node& n = nodes_[id];
  n.in0 = x;
  n.in1 = gain;
  n.in2 = bias;
  n.save_off = static_cast<std::int64_t>(alloc_save(2 * n.rows));  // mean, inv_std per row
  const std::size_t d = n.cols;
  const double* xp = vals_.data() + nodes_[x].off;
  const double* gp = vals_.data() + nodes_[gain].off;
  const double* bp = vals_.data() + nodes_[bias].off;
  double* yp = vals_.data() + n.off;
  double* sp = save_.data() + n.save_off;
  for (std::size_t r = 0; r < n.rows; ++r) {
    const double* xr = xp + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    sp[2 * r] = mean;
    sp[2 * r + 1] = inv;
    double* yr = yp + r * d;
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - mean) * inv * gp[i] + bp[i];
  }
  return id;
}

Tape::VarId Tape::gelu(VarId x) {
  check_exists(x, "gelu");
  const Node& nx = nodes_[x];
  VarId id = push(Op::kGelu, nx.rank, nx.rows, nx.cols);
  Node& n = nodes_[id];
  n.in0 = x;
  const double* xp = vals_.data() + nodes_[x].off;
  double* yp = vals_.data() + n.off;
  for (std::size_t i = 0; i < n.len; ++i) yp[i] = gelu_forward(xp[i]);
  return id;
}

Tape::VarId Tape::gather_rows(VarId table, const std::vector<int>& ids) {
  check_exists(table, "gather_rows");
  const Node& nt = nodes_[table];
  if (nt.rank != 2) throw DimensionError("gather_rows: table must be rank 2");
  for (int i : ids)
    if (i < 0 || static_cast<std::size_t>(i) >= nt.rows)
      throw DimensionError("gather_rows: row index " + std::to_string(i) + " out of range [0," +
                           std::to_string(nt.rows) + ")");
  VarId id = push(Op::kGather, 2, ids.size(), nt.cols);
  Node& n = nodes_[id];
  n.in0 = table;
  n.aux_off = static_cast<std::int64_t>(aux_.size());
  n.aux_len = static_cast<std::int64_t>(ids.size());
  aux_.insert(aux_.end(), ids.begin(), ids.end());
  const double* tp = vals_.data() + nodes_[table].off;
  double* yp = vals_.data() + n.off;
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::memcpy(yp + r * n.cols, tp + static_cast<std::size_t>(ids[r]) * n.cols,
                n.cols * sizeof(double));
  return id;
}

Tape::VarId Tape::attention(VarId q, VarId k, VarId v, int heads, double scale_factor) {
  check_exists(q, "attention");
  check_exists(k, "attention");
  check_exists(v, "attention");
  const Node& nq = nodes_[q];
  const Node& nk = nodes_[k];
  const Node& nv = nodes_[v];
  if (nq.rows != nk.rows || nq.rows != nv.rows || nq.cols != nk.cols || nq.cols != nv.cols)
    throw DimensionError("attention: q/k/v shapes disagree");
  if (heads < 1 || nq.cols % static_cast<std::size_t>(heads) != 0)
    throw DimensionError("attention: width " + std::to_string(nq.cols) +
                         " not divisible by heads " + std::to_string(heads));
  const std::size_t seq = nq.rows, d = nq.cols, dh = d / static_cast<std::size_t>(heads);
  VarId id = push(Op::kAttention, 2, seq, d);
  Node& n = nodes_[id];
  n.in0 = q;
  n.in1 = k;
  n.in2 = v;
  n.heads = heads;
  n.scalar = scale_factor;
  n.save_off = static_cast<std::int64_t>(alloc_save(static_cast<std::size_t>(heads) * seq * seq));
  const double* qp = vals_.data() + nodes_[q].off;
  const double* kp = vals_.data() + nodes_[k].off;
  const double* vp = vals_.data() + nodes_[v].off;
  double* yp = vals_.data() + n.off;
  double* probs = save_.data() + n.save_off;
  scratch_.resize(seq);
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h) * dh;
    double* ph = probs + static_cast<std::size_t>(h) * seq * seq;
    for (std::size_t j = 0; j < seq; ++j) {
      const double* qj = qp + j * d + c0;
      for (std::size_t m = 0; m < seq; ++m) {
        const double* km = kp + m * d + c0;
        double acc = 0.0;
        for (std::size_t i = 0; i < dh; ++i) acc += qj[i] * km[i];
        scratch_[m] = acc * scale_factor;
      }
      double* pj = ph + j * seq;
      softmax_row(scratch_.data(), pj, seq);
      double* yj = yp + j * d + c0;
      for (std::size_t i = 0; i < dh; ++i) yj[i] = 0.0;
      for (std::size_t m = 0; m < seq; ++m) {
        const double w = pj[m];
        const double* vm = vp + m * d + c0;
        for (std::size_t i = 0; i < dh; ++i) yj[i] += w * vm[i];
      }
    }
  }
  return id;
}

std::span<const double> Tape::attention_probs(VarId id, int head) const {
  const Node& n = nodes_[id];
  const std::size_t seq = n.rows;
  return {save_.data() + n.save_off + static_cast<std::size_t>(head) * seq * seq, seq * seq};
}

Tape::VarId Tape::select_row(VarId x, std::size_t row) {
  check_exists(x, "select_row");
  const Node& nx = nodes_[x];
  if (nx.rank != 2 || row >= nx.rows) throw DimensionError("select_row: row out of range");
  VarId id = push(Op::kSelectRow, 1, 1, nx.cols);
  Node& n = nodes_[id];
  n.in0 = x;
  n.aux_off = static_cast<std::int64_t>(row);
  std::memcpy(vals_.data() + n.off, vals_.data() + nodes_[x].off + row * nx.cols,
              nx.cols * sizeof(double));
  return id;
}

Tape::VarId Tape::dot(VarId a, VarId b) {
  check_exists(a, "dot");
  check_exists(b, "dot");
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  if (na.len != nb.len)
    throw DimensionError("dot: length mismatch " + value_tensor(a).shape_str() + " vs " +
                         value_tensor(b).shape_str());
  VarId id = push(Op::kDot, 1, 1, 1);
  Node& n = nodes_[id];
  n.in0 = a;
  n.in1 = b;
  const double* ap = vals_.data() + nodes_[a].off;
  const double* bp = vals_.data() + nodes_[b].off;
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes_[a].len; ++i) acc += ap[i] * bp[i];
  vals_[n.off] = acc;
  return id;
}

Tape::VarId Tape::hinge(VarId pos, VarId neg) {
  check_exists(pos, "hinge");
  check_exists(neg, "hinge");
  if (nodes_[pos].len != 1 || nodes_[neg].len != 1)
    throw DimensionError("hinge: scores must be scalars");
  VarId id = push(Op::kHinge, 1, 1, 1);
  Node& n = nodes_[id];
  n.in0 = pos;
  n.in1 = neg;
  double m = 1.0 - vals_[nodes_[pos].off] + vals_[nodes_[neg].off];
  vals_[n.off] = m > 0.0 ? m : 0.0;
  return id;
}

Tape::VarId Tape::sum_scalars(const std::vector<VarId>& xs) {
  for (VarId x : xs) {
    check_exists(x, "sum_scalars");
    if (nodes_[x].len != 1) throw DimensionError("sum_scalars: inputs must be scalars");
  }
  VarId id = push(Op::kSumScalars, 1, 1, 1);
  Node& n = nodes_[id];
  n.aux_off = static_cast<std::int64_t>(aux_.size());
  n.aux_len = static_cast<std::int64_t>(xs.size());
  for (VarId x : xs) aux_.push_back(x);
  double acc = 0.0;
  for (VarId x : xs) acc += vals_[nodes_[x].off];
  vals_[n.off] = acc;
  return id;
}

void Tape::backward(VarId output) {
  check_exists(output, "backward");
  if (nodes_[output].len != 1)
    throw DimensionError("backward: output must be a scalar");
  grads_.assign(vals_.size(), 0.0);
  grads_[nodes_[output].off] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) backward_node(nodes_[i]);
}

void Tape::backward_node(const Node& n) {
  const double* g = grads_.data() + n.off;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kLinear: {
      const Node& nx = nodes_[n.in0];
      const Node& nw = nodes_[n.in1];
      const std::size_t rows = nx.rows, d_in = nx.cols, d_out = nw.rows;
      const double* xp = vals_.data() + nx.off;
      const double* wp = vals_.data() + nw.off;
      double* dx = grads_.data() + nx.off;
      double* dw = grads_.data() + nw.off;
      double* db = n.in2 >= 0 ? grads_.data() + nodes_[n.in2].off : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * d_out;
        const double* xr = xp + r * d_in;
        double* dxr = dx + r * d_in;
        for (std::size_t o = 0; o < d_out; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          const double* wr = wp + o * d_in;
          double* dwr = dw + o * d_in;
          for (std::size_t i = 0; i < d_in; ++i) {
            dxr[i] += go * wr[i];
            dwr[i] += go * xr[i];
          }
          if (db) db[o] += go;
        }
      }
      break;
    }
    case Op::kAdd: {
      double* da = grads_.data() + nodes_[n.in0].off;
      double* dbb = grads_.data() + nodes_[n.in1].off;
      for (std::size_t i = 0; i < n.len; ++i) {
        da[i] += g[i];
        dbb[i] += g[i];
      }
      break;
    }
    case Op::kScale: {
      double* da = grads_.data() + nodes_[n.in0].off;
      for (std::size_t i = 0; i < n.len; ++i) da[i] += n.scalar * g[i];
      break;
    }
    case Op::kSoftmax: {
      const double* y = vals_.data() + n.off;
      double* dx = grads_.data() + nodes_[n.in0].off;
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double* yr = y + r * n.cols;
        const double* gr = g + r * n.cols;
        double s = 0.0;
        for (std::size_t i = 0; i < n.cols; ++i) s += gr[i] * yr[i];
        double* dxr = dx + r * n.cols;
        for (std::size_t i = 0; i < n.cols; ++i) dxr[i] += yr[i] * (gr[i] - s);
      }
      break;
    }
    case Op::kLayerNorm: {
      const Node& nx = nodes_[n.in0];
      const std::size_t d = n.cols;
      const double* xp = vals_.data() + nx.off;
      const double* gp = vals_.data() + nodes_[n.in1].off;
      double* dx = grads_.data() + nx.off;
      double* dgain = grads_.data() + nodes_[n.in1].off;
      double* dbias = grads_.data() + nodes_[n.in2].off;
      const double* sp = save_.data() + n.save_off;
      for (std::size_t r = 0; r < n.rows; ++r) {
        const double mean = sp[2 * r], inv = sp[2 * r + 1];
        const double* xr = xp + r * d;
        const double* gr = g + r * d;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          double xhat = (xr[i] - mean) * inv;
          double dxhat = gr[i] * gp[i];
          dgain[i] += gr[i] * xhat;
          dbias[i] += gr[i];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        double* dxr = dx + r * d;
        for (std::size_t i = 0; i < d; ++i) {
          double xhat = (xr[i] - mean) * inv;
          double dxhat = gr[i] * gp[i];
          dxr[i] += inv * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
      }
      break;
    }
    case Op::kGelu: {
      const double* xp = vals_.data() + nodes_[n.in0].off;
      double* dx = grads_.data() + nodes_[n.in0].off;
      for (std::size_t i = 0; i < n.len; ++i) dx[i] += g[i] * gelu_backward(xp[i]);
      break;
    }
    case Op::kGather: {
      const Node& nt = nodes_[n.in0];
      double* dt = grads_.data() + nt.off;
      const int* ids = aux_.data() + n.aux_off;
      for (std::size_t r = 0; r < n.rows; ++r) {
        double* row = dt + static_cast<std::size_t>(ids[r]) * n.cols;
        const double* gr = g + r * n.cols;
        for (std::size_t i = 0; i < n.cols; ++i) row[i] += gr[i];
      }
      break;
    }
    case Op::kAttention: {
      const std::size_t seq = n.rows, d = n.cols;
      const std::size_t dh = d / static_cast<std::size_t>(n.heads);
      const double* qp = vals_.data() + nodes_[n.in0].off;
      const double* kp = vals_.data() + nodes_[n.in1].off;
      const double* vp = vals_.data() + nodes_[n.in2].off;
      double* dq = grads_.data() + nodes_[n.in0].off;
      double* dk = grads_.data() + nodes_[n.in1].off;
      double* dv = grads_.data() + nodes_[n.in2].off;
      const double* probs = save_.data() + n.save_off;
      scratch_.resize(2 * seq);
      double* dp_row = scratch_.data();
      double* ds_row = scratch_.data() + seq;
      for (int h = 0; h < n.heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h) * dh;
        const double* ph = probs + static_cast<std::size_t>(h) * seq * seq;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* gj = g + j * d + c0;
          const double* pj = ph + j * seq;
          // dP[j,m] = g_out[j,:] . V[m,:]; dV[m,:] += P[j,m] * g_out[j,:]
          for (std::size_t m = 0; m < seq; ++m) {
            const double* vm = vp + m * d + c0;
            double* dvm = dv + m * d + c0;
            double acc = 0.0;
            const double w = pj[m];
            for (std::size_t i = 0; i < dh; ++i) {
              acc += gj[i] * vm[i];
              dvm[i] += w * gj[i];
            }
            dp_row[m] = acc;
          }
          double s = 0.0;
          for (std::size_t m = 0; m < seq; ++m) s += dp_row[m] * pj[m];
          for (std::size_t m = 0; m < seq; ++m) ds_row[m] = pj[m] * (dp_row[m] - s) * n.scalar;
          const double* qj = qp + j * d + c0;
          double* dqj = dq + j * d + c0;
          for (std::size_t m = 0; m < seq; ++m) {
            const double dsm = ds_row[m];
            if (dsm == 0.0) continue;
            const double* km = kp + m * d + c0;
            double* dkm = dk + m * d + c0;
            for (std::size_t i = 0; i < dh; ++i) {
              dqj[i] += dsm * km[i];
              dkm[i] += dsm * qj[i];
            }
          }
        }
      }
      break;
    }
    case Op::kSelectRow: {
      const Node& nx = nodes_[n.in0];
      double* dx = grads_.data() + nx.off + static_cast<std::size_t>(n.aux_off) * nx.cols;
      for (std::size_t i = 0; i < n.cols; ++i) dx[i] += g[i];
      break;
    }
    case Op::kDot: {
      const double go = g[0];
      const double* ap = vals_.data() + nodes_[n.in0].off;
      const double* bp = vals_.data() + nodes_[n.in1].off;
      double* da = grads_.data() + nodes_[n.in0].off;
      double* db = grads_.data() + nodes_[n.in1].off;
      for (std::size_t i = 0; i < nodes_[n.in0].len; ++i) {
        da[i] += go * bp[i];
        db[i] += go * ap[i];
      }
      break;
    }
    case Op::kHinge: {
      if (vals_[n.off] > 0.0) {
        grads_[nodes_[n.in0].off] -= g[0];
        grads_[nodes_[n.in1].off] += g[0];
      }
      break;
    }
    case Op::kSumScalars: {
      const int* ids = aux_.data() + n.aux_off;
      for (std::int64_t i = 0; i < n.aux_len; ++i)
        grads_[nodes_[ids[i]].off] += g[0];
      break;
    }
  }
}

double grad_check(
    const std::function<Tape::VarId(Tape&, const std::vector<Tape::VarId>&)>& build,
    const std::vector<Tensor>& params, double step) {
  Tape tape;
  std::vector<Tape::VarId> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Tape::VarId out = build(tape, leaves);
  tape.backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Tape::VarId l : leaves) analytic.push_back(tape.grad_tensor(l));

  auto eval = [&](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<Tape::VarId> ls;
    ls.reserve(p.size());
    for (const Tensor& x : p) ls.push_back(t.leaf(x));
    return t.scalar_value(build(t, ls));
  };

  std::vector<Tensor> work = params;
  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double orig = work[pi].values[i];
      work[pi].values[i] = orig + step;
      double f_plus = eval(work);
      work[pi].values[i] = orig - step;
      double f_minus = eval(work);
      work[pi].values[i] = orig;
      double numeric = (f_plus - f_minus) / (2.0 * step);
      double a = analytic[pi].values[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double err = std::fabs(a - numeric) / denom;
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace fedrank
