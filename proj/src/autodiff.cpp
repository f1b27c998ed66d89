#include "photon/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace photon::ad {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0);
  return grad;
}

void Node::accumulate(std::span<const real> g) {
  auto& buf = grad_buffer();
  auto d = buf.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Param::Param(Tensor init) : node_(std::make_shared<Node>()) {
  node_->value = std::move(init);
  node_->requires_grad = true;
}

void Param::zero_grad() { node_->grad = Tensor(); }

Var Tape::record(Tensor value, std::vector<Var> parents, std::function<void(const Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!record_) return Var(std::move(n));
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (!needs) return Var(std::move(n));
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward = std::move(fn);
  nodes_.push_back(n);
  return Var(std::move(n));
}

void Tape::backward(const Var& out) {
  if (!out.defined() || out.numel() != 1) {
    throw ContractError("backward: output must be a single scalar, got " +
                        (out.defined() ? shape_str(out.shape()) : std::string("undefined")));
  }
  if (!out.requires_grad()) return;
  out.node()->grad_buffer()[0] += 1;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.has_grad() && n.backward) n.backward(n);
  }
}

namespace {

Tensor checked(Tensor t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
  return t;
}

Node& parent(const Node& n, std::size_t i) { return *n.parents[i]; }

// Shape rule for elementwise binaries: b equals a or a trailing suffix of a.
void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " are not compatible");
  }
}

std::size_t last_dim(const Var& v, const char* op) {
  if (v.shape().empty()) throw DimensionError(std::string(op) + ": rank-0 input");
  return v.shape().back();
}

}  // namespace

Var add(Tape& t, const Var& a, const Var& b) {
  check_broadcast(a.shape(), b.shape(), "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t nb = bv.numel();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i % nb];
  return t.record(checked(std::move(out), "add"), {a, b}, [nb](const Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const auto g = o.grad.data();
    if (pa.requires_grad) pa.accumulate(g);
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

Var sub(Tape& t, const Var& a, const Var& b) {
  check_broadcast(a.shape(), b.shape(), "sub");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t nb = bv.numel();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] - bv[i % nb];
  return t.record(checked(std::move(out), "sub"), {a, b}, [nb](const Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const auto g = o.grad.data();
    if (pa.requires_grad) pa.accumulate(g);
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
    }
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  check_broadcast(a.shape(), b.shape(), "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t nb = bv.numel();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i % nb];
  return t.record(checked(std::move(out), "mul"), {a, b}, [nb](const Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const auto g = o.grad.data();
    const auto x = pa.value.data();
    const auto y = pb.value.data();
    if (pa.requires_grad) {
      auto ga = pa.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i % nb];
    }
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * x[i];
    }
  });
}

Var scale(Tape& t, const Var& a, real s) {
  const auto& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * s;
  return t.record(checked(std::move(out), "scale"), {a}, [s](const Node& o) {
    auto ga = parent(o, 0).grad_buffer().data();
    const auto g = o.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var silu(Tape& t, const Var& a) {
  const auto& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] / (1 + std::exp(-av[i]));
  return t.record(checked(std::move(out), "silu"), {a}, [](const Node& o) {
    Node& pa = parent(o, 0);
    auto ga = pa.grad_buffer().data();
    const auto x = pa.value.data();
    const auto g = o.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const real s = 1 / (1 + std::exp(-x[i]));
      ga[i] += g[i] * s * (1 + x[i] * (1 - s));
    }
  });
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul: need rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  const bool shared_b = bs.size() == 2;
  if (k != kb || (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())))) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape os(as.begin(), as.end() - 1);
  os.push_back(n);
  Tensor out(os);
  const real* A = a.value().data().data();
  const real* B = b.value().data().data();
  real* C = out.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const real* Ab = A + bi * m * k;
    const real* Bb = shared_b ? B : B + bi * k * n;
    real* Cb = C + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const real aik = Ab[i * k + kk];
        const real* brow = Bb + kk * n;
        real* crow = Cb + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return t.record(checked(std::move(out), "matmul"), {a, b}, [=](const Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const real* G = o.grad.data().data();
    const real* Av = pa.value.data().data();
    const real* Bv = pb.value.data().data();
    real* GA = pa.requires_grad ? pa.grad_buffer().data().data() : nullptr;
    real* GB = pb.requires_grad ? pb.grad_buffer().data().data() : nullptr;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const real* Gb = G + bi * m * n;
      const real* Ab = Av + bi * m * k;
      const std::size_t boff = shared_b ? 0 : bi * k * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const real* brow = Bv + boff + kk * n;
          const real* grow = Gb + i * n;
          if (GA) {
            real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            GA[bi * m * k + i * k + kk] += acc;
          }
          if (GB) {
            const real aik = Ab[i * k + kk];
            real* gbrow = GB + boff + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
          }
        }
      }
    }
  });
}

Var transpose(Tape& t, const Var& a) {
  const Shape& as = a.shape();
  if (as.size() < 2) throw DimensionError("transpose: need rank >= 2, got " + shape_str(as));
  const std::size_t r = as[as.size() - 2];
  const std::size_t c = as.back();
  const std::size_t batch = a.numel() / (r * c);
  Shape os = as;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor out(os);
  const auto& av = a.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = av[b * r * c + i * c + j];
  return t.record(std::move(out), {a}, [=](const Node& o) {
    auto ga = parent(o, 0).grad_buffer().data();
    const auto g = o.grad.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
  });
}

Var softmax_rows(Tape& t, const Var& x, std::optional<CausalMask> mask) {
  const Shape& xs = x.shape();
  const std::size_t n = last_dim(x, "softmax_rows");
  std::size_t s = 1;
  if (mask) {
    if (xs.size() < 2) throw DimensionError("softmax_rows: a mask needs rank >= 2 input");
    s = xs[xs.size() - 2];
  }
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.value();
  Tensor out(xs);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t q = r % s;
    const real* in = xv.data().data() + r * n;
    real* y = out.data().data() + r * n;
    real mx = -std::numeric_limits<real>::infinity();
    bool any = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask && !mask->allowed(q, k)) continue;
      mx = std::max(mx, in[k]);
      any = true;
    }
    if (!any) throw ContractError("softmax_rows: fully masked row " + std::to_string(r) + " (empty attention context)");
    real z = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask && !mask->allowed(q, k)) continue;
      y[k] = std::exp(in[k] - mx);
      z += y[k];
    }
    for (std::size_t k = 0; k < n; ++k) y[k] /= z;
  }
  return t.record(checked(std::move(out), "softmax_rows"), {x}, [n, rows](const Node& o) {
    auto gx = parent(o, 0).grad_buffer().data();
    const auto g = o.grad.data();
    const auto y = o.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      real dot = 0;
      for (std::size_t k = 0; k < n; ++k) dot += g[r * n + k] * y[r * n + k];
      for (std::size_t k = 0; k < n; ++k) gx[r * n + k] += y[r * n + k] * (g[r * n + k] - dot);
    }
  });
}

Var rmsnorm(Tape& t, const Var& x, const Var& gain, real eps) {
  const std::size_t d = last_dim(x, "rmsnorm");
  if (gain.shape() != Shape{d}) {
    throw DimensionError("rmsnorm: gain " + shape_str(gain.shape()) + " does not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  Tensor out(x.shape());
  std::vector<real> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    real ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    inv[r] = 1 / std::sqrt(ss / static_cast<real>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * inv[r] * gv[j];
  }
  return t.record(checked(std::move(out), "rmsnorm"), {x, gain}, [d, rows, inv = std::move(inv)](const Node& o) {
    Node& px = parent(o, 0);
    Node& pg = parent(o, 1);
    const auto g = o.grad.data();
    const auto xs = px.value.data();
    const auto gs = pg.value.data();
    real* gx = px.requires_grad ? px.grad_buffer().data().data() : nullptr;
    real* gg = pg.requires_grad ? pg.grad_buffer().data().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const real ir = inv[r];
      real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * gs[j] * xs[r * d + j];
      const real c = dot * ir * ir * ir / static_cast<real>(d);
      for (std::size_t j = 0; j < d; ++j) {
        if (gx) gx[r * d + j] += g[r * d + j] * gs[j] * ir - xs[r * d + j] * c;
        if (gg) gg[j] += g[r * d + j] * xs[r * d + j] * ir;
      }
    }
  });
}

Var embedding(Tape& t, const Var& table, std::span<const std::uint32_t> ids) {
  if (table.shape().size() != 2) throw DimensionError("embedding: table must be [V, D], got " + shape_str(table.shape()));
  const std::size_t v = table.shape()[0];
  const std::size_t d = table.shape()[1];
  Tensor out({ids.size(), d});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) throw DimensionError("embedding: id " + std::to_string(ids[i]) + " >= vocab " + std::to_string(v));
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [d, idv = std::move(idv)](const Node& o) {
    auto gt = parent(o, 0).grad_buffer().data();
    const auto g = o.grad.data();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
  });
}

Var cross_entropy(Tape& t, const Var& logits, std::span<const std::uint32_t> targets, std::span<const real> weights) {
  if (logits.shape().size() != 2) throw DimensionError("cross_entropy: logits must be [N, V], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.shape()[0];
  const std::size_t v = logits.shape()[1];
  if (targets.size() != rows || weights.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(weights.size()) + " weights");
  }
  const auto& lv = logits.value();
  Tensor probs({rows, v});
  real total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= v) throw DimensionError("cross_entropy: target out of vocabulary");
    const real* in = lv.data().data() + r * v;
    real mx = *std::max_element(in, in + v);
    real z = 0;
    for (std::size_t k = 0; k < v; ++k) z += std::exp(in[k] - mx);
    const real lse = mx + std::log(z);
    for (std::size_t k = 0; k < v; ++k) probs[r * v + k] = std::exp(in[k] - lse);
    total += weights[r] * (lse - in[targets[r]]);
  }
  std::vector<std::uint32_t> tg(targets.begin(), targets.end());
  std::vector<real> wt(weights.begin(), weights.end());
  return t.record(checked(Tensor::scalar(total), "cross_entropy"), {logits},
                  [v, probs = std::move(probs), tg = std::move(tg), wt = std::move(wt)](const Node& o) {
                    auto gl = parent(o, 0).grad_buffer().data();
                    const real g = o.grad[0];
                    for (std::size_t r = 0; r < tg.size(); ++r) {
                      if (wt[r] == 0) continue;
                      const real c = g * wt[r];
                      for (std::size_t k = 0; k < v; ++k) gl[r * v + k] += c * probs[r * v + k];
                      gl[r * v + tg[r]] -= c;
                    }
                  });
}

Var concat(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat: rank-0 input");
  const std::size_t rows = parts.front().numel() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw DimensionError("concat: leading shapes differ, " + shape_str(first) + " vs " + shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape os = first;
  os.back() = total;
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].value();
    const std::size_t w = widths[pi];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += w;
  }
  return t.record(std::move(out), parts, [rows, total, widths](const Node& o) {
    const auto g = o.grad.data();
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      Node& p = parent(o, pi);
      const std::size_t w = widths[pi];
      if (p.requires_grad) {
        auto gp = p.grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + off + j];
      }
      off += w;
    }
  });
}

Var slice_last(Tape& t, const Var& a, std::size_t offset, std::size_t length) {
  const std::size_t w = last_dim(a, "slice_last");
  if (length == 0 || offset + length > w) {
    throw DimensionError("slice_last: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t rows = a.numel() / w;
  Shape os = a.shape();
  os.back() = length;
  Tensor out(os);
  const auto& av = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(r * w + offset), length,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * length));
  return t.record(std::move(out), {a}, [=](const Node& o) {
    auto ga = parent(o, 0).grad_buffer().data();
    const auto g = o.grad.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < length; ++j) ga[r * w + offset + j] += g[r * length + j];
  });
}

std::vector<Var> split(Tape& t, const Var& a, const std::vector<std::size_t>& sizes) {
  const std::size_t w = last_dim(a, "split");
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != w) throw DimensionError("split: sizes sum to " + std::to_string(total) + ", last extent is " + std::to_string(w));
  std::vector<Var> out;
  std::size_t off = 0;
  for (auto s : sizes) {
    out.push_back(slice_last(t, a, off, s));
    off += s;
  }
  return out;
}

Var reshape(Tape& t, const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return t.record(std::move(out), {a}, [](const Node& o) { parent(o, 0).accumulate(o.grad.data()); });
}

Var sum(Tape& t, const Var& a) {
  real s = 0;
  for (auto x : a.value().data()) s += x;
  return t.record(checked(Tensor::scalar(s), "sum"), {a}, [](const Node& o) {
    auto ga = parent(o, 0).grad_buffer().data();
    const real g = o.grad[0];
    for (auto& x : ga) x += g;
  });
}

Var stop_gradient(const Var& a) { return constant(a.value()); }

}  // namespace photon::ad
