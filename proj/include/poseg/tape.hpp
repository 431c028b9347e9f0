#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "poseg/errors.hpp"
#include "poseg/kernels.hpp"
#include "poseg/rng.hpp"
#include "poseg/tensor.hpp"

namespace poseg {

// A learnable tensor with its accumulated gradient. `decay` marks parameters
// that weight decay applies to (matrices yes; biases, norm scales/shifts and
// activation slopes no).
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;
};

// Owns all parameters of a model in a fixed, deterministic registration
// order. The optimizer walks this order, so runs are bit-reproducible.
template <class T>
class ParamStore {
 public:
  Param<T>& create(const std::string& name, std::vector<int> shape, bool decay) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = Tensor<T>::zeros(shape);
    p->grad = Tensor<T>::zeros(shape);
    p->decay = decay;
    index_[name] = int(params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[size_t(it->second)].get();
  }

  Param<T>& at(const std::string& name) {
    Param<T>* p = find(name);
    if (!p) throw Error("no such parameter: " + name);
    return *p;
  }

  const std::vector<std::unique_ptr<Param<T>>>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) std::fill(p->grad.v.begin(), p->grad.v.end(), T(0));
  }

  int64_t total_elems() const {
    int64_t n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::map<std::string, int> index_;
};

// Seeded fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
void init_uniform(Param<T>& p, Rng& rng, int fan_in) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& x : p.value.v) x = T(rng.uniform(-bound, bound));
}

// Reverse-mode autodiff tape. Nodes are created in topological order by the
// ops below; backward() walks them in reverse. Ops refer to nodes by integer
// id (never by pointer: the node vector reallocates as it grows).
//
// Gradients are accumulated lazily: a node's grad buffer is allocated on
// first touch, and backward skips nodes whose grad was never touched, so
// unused subgraphs cost nothing.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When false, ops skip recording backward closures and nothing requires
  // grad: a pure inference pass.
  bool grad_enabled = true;

  int size() const { return int(nodes_.size()); }
  const Tensor<T>& val(int id) const { return nodes_[size_t(id)].val; }
  bool needs_grad(int id) const { return nodes_[size_t(id)].needs_grad; }

  bool grad_touched(int id) const { return nodes_[size_t(id)].grad.numel() != 0; }

  // Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(int id) {
    Node& nd = nodes_[size_t(id)];
    if (nd.grad.numel() == 0) nd.grad = Tensor<T>::zeros(nd.val.shape);
    return nd.grad;
  }

  // ---- leaves ----

  int leaf(Tensor<T> v, bool requires_grad = false) {
    Node nd;
    nd.val = std::move(v);
    nd.needs_grad = requires_grad && grad_enabled;
    nodes_.push_back(std::move(nd));
    return size() - 1;
  }

  int constant(Tensor<T> v) { return leaf(std::move(v), false); }

  // Leaf bound to a parameter; export_param_grads() later accumulates the
  // leaf's gradient into the parameter's grad buffer.
  int param(Param<T>& p) {
    int id = leaf(p.value, true);
    if (nodes_[size_t(id)].needs_grad) bindings_.push_back({&p, id});
    return id;
  }

  // Copy of a value that blocks gradient flow.
  int detach(int a) { return constant(val(a)); }

  // ---- arithmetic ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor<T> y(val(a).shape);
    kernels::vadd(y.numel(), val(a).data(), val(b).data(), y.data());
    return make(std::move(y), {a, b}, [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) kernels::axpy(g.numel(), T(1), g.data(), t.grad(a).data());
      if (t.needs_grad(b)) kernels::axpy(g.numel(), T(1), g.data(), t.grad(b).data());
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor<T> y(val(a).shape);
    for (int64_t i = 0; i < y.numel(); ++i) y.v[i] = val(a).v[i] - val(b).v[i];
    return make(std::move(y), {a, b}, [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) kernels::axpy(g.numel(), T(1), g.data(), t.grad(a).data());
      if (t.needs_grad(b)) kernels::axpy(g.numel(), T(-1), g.data(), t.grad(b).data());
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor<T> y(val(a).shape);
    kernels::vmul(y.numel(), val(a).data(), val(b).data(), y.data());
    return make(std::move(y), {a, b}, [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<T>& da = t.grad(a);
        const Tensor<T>& vb = t.val(b);
        for (int64_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i] * vb.v[i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& db = t.grad(b);
        const Tensor<T>& va = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i) db.v[i] += g.v[i] * va.v[i];
      }
    });
  }

  int scale(int a, double c) {
    Tensor<T> y(val(a).shape);
    kernels::vscale(y.numel(), T(c), val(a).data(), y.data());
    return make(std::move(y), {a}, [a, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      kernels::axpy(g.numel(), T(c), g.data(), t.grad(a).data());
    });
  }

  // y = 1 - a, elementwise.
  int ones_minus(int a) {
    Tensor<T> y(val(a).shape);
    for (int64_t i = 0; i < y.numel(); ++i) y.v[i] = T(1) - val(a).v[i];
    return make(std::move(y), {a}, [a](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      kernels::axpy(g.numel(), T(-1), g.data(), t.grad(a).data());
    });
  }

  // Bias broadcast: y[r,c] = a[r,c] + v[c].
  int add_rowvec(int a, int vec) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& vv = val(vec);
    if (av.ndim() != 2 || vv.numel() != av.cols()) throw ShapeMismatch("add_rowvec");
    Tensor<T> y = av;
    for (int r = 0; r < av.rows(); ++r)
      kernels::axpy(av.cols(), T(1), vv.data(), y.data() + int64_t(r) * av.cols());
    return make(std::move(y), {a, vec}, [a, vec](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      int rows = g.rows(), cols = g.cols();
      if (t.needs_grad(a)) kernels::axpy(g.numel(), T(1), g.data(), t.grad(a).data());
      if (t.needs_grad(vec)) {
        Tensor<T>& dv = t.grad(vec);
        for (int r = 0; r < rows; ++r)
          kernels::axpy(cols, T(1), g.data() + int64_t(r) * cols, dv.data());
      }
    });
  }

  // Per-row constant weights: y[r,:] = w[r] * a[r,:]. Used to freeze padded
  // text rows (w in {0,1}) without branching in the graph.
  int mul_rows(int a, std::vector<T> w) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2 || int(w.size()) != av.rows()) throw ShapeMismatch("mul_rows");
    Tensor<T> y(av.shape);
    for (int r = 0; r < av.rows(); ++r)
      kernels::vscale(av.cols(), w[size_t(r)], av.data() + int64_t(r) * av.cols(),
                      y.data() + int64_t(r) * av.cols());
    auto wp = std::make_shared<std::vector<T>>(std::move(w));
    return make(std::move(y), {a}, [a, wp](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& da = t.grad(a);
      int cols = g.cols();
      for (int r = 0; r < g.rows(); ++r)
        kernels::axpy(cols, (*wp)[size_t(r)], g.data() + int64_t(r) * cols,
                      da.data() + int64_t(r) * cols);
    });
  }

  // ---- matrix ops ----

  int matmul(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows()) throw ShapeMismatch("matmul");
    int m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor<T> y({m, n});
    kernels::gemm_nn(m, k, n, av.data(), bv.data(), y.data(), false);
    return make(std::move(y), {a, b}, [a, b, m, k, n](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a))
        kernels::gemm_nt(m, n, k, g.data(), t.val(b).data(), t.grad(a).data(), true);
      if (t.needs_grad(b))
        kernels::gemm_tn(k, m, n, t.val(a).data(), g.data(), t.grad(b).data(), true);
    });
  }

  // y = a * b^T with b stored [n,k]; the natural form for linear layers.
  int matmul_nt(int a, int b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.cols()) throw ShapeMismatch("matmul_nt");
    int m = av.rows(), k = av.cols(), n = bv.rows();
    Tensor<T> y({m, n});
    kernels::gemm_nt(m, k, n, av.data(), bv.data(), y.data(), false);
    return make(std::move(y), {a, b}, [a, b, m, k, n](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      if (t.needs_grad(a))
        kernels::gemm_nn(m, n, k, g.data(), t.val(b).data(), t.grad(a).data(), true);
      if (t.needs_grad(b))
        kernels::gemm_tn(n, m, k, g.data(), t.val(a).data(), t.grad(b).data(), true);
    });
  }

  int transpose(int a) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2) throw ShapeMismatch("transpose");
    int r = av.rows(), c = av.cols();
    Tensor<T> y({c, r});
    kernels::transpose(r, c, av.data(), y.data());
    return make(std::move(y), {a}, [a, r, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);  // [c,r]
      Tensor<T>& da = t.grad(a);          // [r,c]
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < r; ++j) da.v[size_t(j) * c + i] += g.v[size_t(i) * r + j];
    });
  }

  int reshape(int a, std::vector<int> shape) {
    if (Tensor<T>::count(shape) != val(a).numel()) throw ShapeMismatch("reshape");
    Tensor<T> y = val(a);
    y.shape = std::move(shape);
    return make(std::move(y), {a}, [a](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      kernels::axpy(g.numel(), T(1), g.data(), t.grad(a).data());
    });
  }

  int slice_rows(int a, int r0, int r1) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2 || r0 < 0 || r1 > av.rows() || r0 >= r1) throw ShapeMismatch("slice_rows");
    int c = av.cols();
    Tensor<T> y({r1 - r0, c});
    std::copy(av.data() + int64_t(r0) * c, av.data() + int64_t(r1) * c, y.data());
    return make(std::move(y), {a}, [a, r0, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      kernels::axpy(g.numel(), T(1), g.data(), t.grad(a).data() + int64_t(r0) * c);
    });
  }

  int row(int a, int r) { return slice_rows(a, r, r + 1); }

  int slice_cols(int a, int c0, int c1) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2 || c0 < 0 || c1 > av.cols() || c0 >= c1) throw ShapeMismatch("slice_cols");
    int rows = av.rows(), cols = av.cols(), w = c1 - c0;
    Tensor<T> y({rows, w});
    for (int r = 0; r < rows; ++r)
      std::copy(av.data() + int64_t(r) * cols + c0, av.data() + int64_t(r) * cols + c1,
                y.data() + int64_t(r) * w);
    return make(std::move(y), {a}, [a, c0, w](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& da = t.grad(a);
      int cols = da.cols();
      for (int r = 0; r < g.rows(); ++r)
        kernels::axpy(w, T(1), g.data() + int64_t(r) * w, da.data() + int64_t(r) * cols + c0);
    });
  }

  int concat_cols(const std::vector<int>& ids) {
    if (ids.empty()) throw ShapeMismatch("concat_cols: empty");
    int rows = val(ids[0]).rows(), total = 0;
    for (int id : ids) {
      if (val(id).ndim() != 2 || val(id).rows() != rows) throw ShapeMismatch("concat_cols");
      total += val(id).cols();
    }
    Tensor<T> y({rows, total});
    int off = 0;
    for (int id : ids) {
      int c = val(id).cols();
      for (int r = 0; r < rows; ++r)
        std::copy(val(id).data() + int64_t(r) * c, val(id).data() + int64_t(r) * c + c,
                  y.data() + int64_t(r) * total + off);
      off += c;
    }
    auto idsp = std::make_shared<std::vector<int>>(ids);
    return make(std::move(y), ids, [idsp, total](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      int off = 0;
      for (int id : *idsp) {
        int c = t.val(id).cols();
        if (t.needs_grad(id)) {
          Tensor<T>& d = t.grad(id);
          for (int r = 0; r < g.rows(); ++r)
            kernels::axpy(c, T(1), g.data() + int64_t(r) * total + off, d.data() + int64_t(r) * c);
        }
        off += c;
      }
    });
  }

  // Embedding lookup: y[i,:] = table[ids[i],:].
  int gather_rows(int table, std::vector<int> ids) {
    const Tensor<T>& tv = val(table);
    if (tv.ndim() != 2) throw ShapeMismatch("gather_rows");
    int c = tv.cols();
    Tensor<T> y({int(ids.size()), c});
    for (size_t i = 0; i < ids.size(); ++i) {
      int r = ids[i];
      if (r < 0 || r >= tv.rows()) throw TokenOutOfVocab("row " + std::to_string(r));
      std::copy(tv.data() + int64_t(r) * c, tv.data() + int64_t(r) * c + c, y.data() + int64_t(i) * c);
    }
    auto idsp = std::make_shared<std::vector<int>>(std::move(ids));
    return make(std::move(y), {table}, [table, idsp, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& dt = t.grad(table);
      for (size_t i = 0; i < idsp->size(); ++i)
        kernels::axpy(c, T(1), g.data() + int64_t(i) * c, dt.data() + int64_t((*idsp)[i]) * c);
    });
  }

  // ---- reductions ----

  int sum_all(int a) {
    Tensor<T> y({1});
    y.v[0] = kernels::vsum(val(a).numel(), val(a).data());
    return make(std::move(y), {a}, [a](Tape& t, int self) {
      T g = t.grad(self).v[0];
      Tensor<T>& da = t.grad(a);
      for (auto& x : da.v) x += g;
    });
  }

  int mean_all(int a) {
    int64_t n = val(a).numel();
    Tensor<T> y({1});
    y.v[0] = kernels::vsum(n, val(a).data()) / T(n);
    return make(std::move(y), {a}, [a, n](Tape& t, int self) {
      T g = t.grad(self).v[0] / T(n);
      Tensor<T>& da = t.grad(a);
      for (auto& x : da.v) x += g;
    });
  }

  // Mean over rows flagged valid: y[1,C] = mean_{r: valid[r]} a[r,:].
  int masked_mean_rows(int a, const std::vector<uint8_t>& valid) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2 || int(valid.size()) != av.rows()) throw ShapeMismatch("masked_mean_rows");
    int cnt = 0;
    for (uint8_t f : valid) cnt += f ? 1 : 0;
    if (cnt == 0) throw AllTokensPadded("masked_mean_rows over zero valid rows");
    int c = av.cols();
    Tensor<T> y({1, c});
    for (int r = 0; r < av.rows(); ++r)
      if (valid[size_t(r)]) kernels::axpy(c, T(1), av.data() + int64_t(r) * c, y.data());
    kernels::vscale(c, T(1) / T(cnt), y.data(), y.data());
    auto vp = std::make_shared<std::vector<uint8_t>>(valid);
    return make(std::move(y), {a}, [a, vp, cnt, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& da = t.grad(a);
      for (int r = 0; r < da.rows(); ++r)
        if ((*vp)[size_t(r)]) kernels::axpy(c, T(1) / T(cnt), g.data(), da.data() + int64_t(r) * c);
    });
  }

  // Select one element by flat index as a [1] tensor.
  int elem(int a, int64_t idx) {
    if (idx < 0 || idx >= val(a).numel()) throw ShapeMismatch("elem: index out of range");
    Tensor<T> y({1});
    y.v[0] = val(a).v[size_t(idx)];
    return make(std::move(y), {a}, [a, idx](Tape& t, int self) {
      t.grad(a).v[size_t(idx)] += t.grad(self).v[0];
    });
  }

  // ---- activations ----

  int gelu(int a) {
    static const T kInvSqrt2 = T(0.7071067811865475244);
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.shape);
    for (int64_t i = 0; i < y.numel(); ++i) {
      T x = av.v[i];
      y.v[i] = x * T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
    }
    return make(std::move(y), {a}, [a](Tape& t, int self) {
      static const T kInvSqrt2Pi = T(0.3989422804014326779);
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& x = t.val(a);
      Tensor<T>& da = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) {
        T xi = x.v[i];
        T cdf = T(0.5) * (T(1) + std::erf(xi * kInvSqrt2));
        T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * xi * xi);
        da.v[i] += g.v[i] * (cdf + xi * pdf);
      }
    });
  }

  int sigmoid(int a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.shape);
    for (int64_t i = 0; i < y.numel(); ++i) y.v[i] = sigmoid_scalar(av.v[i]);
    return make(std::move(y), {a}, [a](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& y = t.val(self);
      Tensor<T>& da = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i] * y.v[i] * (T(1) - y.v[i]);
    });
  }

  // PReLU with a learned scalar slope (a [1] node).
  int prelu(int a, int slope) {
    if (val(slope).numel() != 1) throw ShapeMismatch("prelu: slope must be scalar");
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.shape);
    kernels::prelu(av.numel(), val(slope).v[0], av.data(), y.data());
    return make(std::move(y), {a, slope}, [a, slope](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& x = t.val(a);
      T s = t.val(slope).v[0];
      if (t.needs_grad(a)) {
        Tensor<T>& da = t.grad(a);
        for (int64_t i = 0; i < g.numel(); ++i)
          da.v[i] += g.v[i] * (x.v[i] >= T(0) ? T(1) : s);
      }
      if (t.needs_grad(slope)) {
        T ds = 0;
        for (int64_t i = 0; i < g.numel(); ++i)
          if (x.v[i] < T(0)) ds += g.v[i] * x.v[i];
        t.grad(slope).v[0] += ds;
      }
    });
  }

  // ---- normalization / attention pieces ----

  int layer_norm(int a, int gamma, int beta, double eps = 1e-5) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2) throw ShapeMismatch("layer_norm");
    int rows = av.rows(), c = av.cols();
    if (val(gamma).numel() != c || val(beta).numel() != c) throw ShapeMismatch("layer_norm params");
    Tensor<T> y(av.shape);
    auto xhat = std::make_shared<Tensor<T>>(av.shape);
    auto inv = std::make_shared<std::vector<T>>(size_t(rows));
    for (int r = 0; r < rows; ++r) {
      const T* xr = av.data() + int64_t(r) * c;
      T mean = kernels::vsum(c, xr) / T(c);
      T var = 0;
      for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= T(c);
      T iv = T(1) / std::sqrt(var + T(eps));
      (*inv)[size_t(r)] = iv;
      for (int j = 0; j < c; ++j) {
        T xh = (xr[j] - mean) * iv;
        xhat->v[size_t(r) * c + j] = xh;
        y.v[size_t(r) * c + j] = val(gamma).v[size_t(j)] * xh + val(beta).v[size_t(j)];
      }
    }
    return make(std::move(y), {a, gamma, beta},
                [a, gamma, beta, xhat, inv, rows, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& gam = t.val(gamma);
      for (int r = 0; r < rows; ++r) {
        const T* gr = g.data() + int64_t(r) * c;
        const T* xh = xhat->data() + int64_t(r) * c;
        if (t.needs_grad(gamma)) {
          Tensor<T>& dg = t.grad(gamma);
          for (int j = 0; j < c; ++j) dg.v[size_t(j)] += gr[j] * xh[j];
        }
        if (t.needs_grad(beta)) {
          Tensor<T>& db = t.grad(beta);
          for (int j = 0; j < c; ++j) db.v[size_t(j)] += gr[j];
        }
        if (t.needs_grad(a)) {
          T m1 = 0, m2 = 0;
          for (int j = 0; j < c; ++j) {
            T dxh = gr[j] * gam.v[size_t(j)];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= T(c);
          m2 /= T(c);
          T iv = (*inv)[size_t(r)];
          Tensor<T>& da = t.grad(a);
          for (int j = 0; j < c; ++j) {
            T dxh = gr[j] * gam.v[size_t(j)];
            da.v[size_t(r) * c + j] += iv * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    });
  }

  // Row-wise softmax with an optional key-validity mask. `mask` may be empty
  // (all valid), length cols (shared across rows) or rows*cols (per-row).
  // Masked columns get probability exactly 0; each valid row sums to 1.
  int softmax_rows(int a, const std::vector<uint8_t>& mask = {}) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 2) throw ShapeMismatch("softmax_rows");
    int rows = av.rows(), c = av.cols();
    bool per_row = int64_t(mask.size()) == int64_t(rows) * c;
    if (!mask.empty() && !per_row && int(mask.size()) != c) throw ShapeMismatch("softmax mask");
    Tensor<T> y(av.shape);
    for (int r = 0; r < rows; ++r) {
      const T* xr = av.data() + int64_t(r) * c;
      T* yr = y.data() + int64_t(r) * c;
      auto valid = [&](int j) {
        return mask.empty() || (per_row ? mask[size_t(r) * c + j] : mask[size_t(j)]) != 0;
      };
      T mx = -std::numeric_limits<T>::infinity();
      int nvalid = 0;
      for (int j = 0; j < c; ++j)
        if (valid(j)) {
          mx = std::max(mx, xr[j]);
          ++nvalid;
        }
      if (nvalid == 0) throw AllTokensPadded("softmax row with no valid keys");
      T z = 0;
      for (int j = 0; j < c; ++j) {
        yr[j] = valid(j) ? std::exp(xr[j] - mx) : T(0);
        z += yr[j];
      }
      for (int j = 0; j < c; ++j) yr[j] /= z;
    }
    return make(std::move(y), {a}, [a, rows, c](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& y = t.val(self);
      Tensor<T>& da = t.grad(a);
      for (int r = 0; r < rows; ++r) {
        const T* gr = g.data() + int64_t(r) * c;
        const T* yr = y.data() + int64_t(r) * c;
        T dot = kernels::vdot(c, gr, yr);
        T* dar = da.data() + int64_t(r) * c;
        for (int j = 0; j < c; ++j) dar[j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  // ---- convolution / resampling ----

  // x [Cin,H,W], w [Cout, Cin*k*k], b [Cout] -> y [Cout,OH,OW].
  int conv2d(int x, int w, int b, int ksize, int stride, int pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    if (xv.ndim() != 3 || wv.ndim() != 2) throw ShapeMismatch("conv2d");
    int cin = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
    int ck = cin * ksize * ksize;
    if (wv.cols() != ck) throw ShapeMismatch("conv2d: weight/kernel mismatch");
    int cout = wv.rows();
    if (val(b).numel() != cout) throw ShapeMismatch("conv2d: bias");
    int oh = (h + 2 * pad - ksize) / stride + 1;
    int ow = (wd + 2 * pad - ksize) / stride + 1;
    int64_t p = int64_t(oh) * ow;
    auto col = std::make_shared<Tensor<T>>(std::vector<int>{ck, int(p)});
    im2col(xv.data(), cin, h, wd, ksize, stride, pad, oh, ow, col->data());
    Tensor<T> y({cout, oh, ow});
    kernels::gemm_nn(cout, ck, int(p), wv.data(), col->data(), y.data(), false);
    for (int co = 0; co < cout; ++co) {
      T bias = val(b).v[size_t(co)];
      T* yr = y.data() + int64_t(co) * p;
      for (int64_t i = 0; i < p; ++i) yr[i] += bias;
    }
    bool keep_col = grad_enabled && (needs_grad(x) || needs_grad(w) || needs_grad(b));
    if (!keep_col) col.reset();
    return make(std::move(y), {x, w, b},
                [x, w, b, col, cin, h, wd, ksize, stride, pad, oh, ow, ck, cout](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);  // [cout,oh,ow]
      int64_t p = int64_t(oh) * ow;
      if (t.needs_grad(b)) {
        Tensor<T>& db = t.grad(b);
        for (int co = 0; co < cout; ++co)
          db.v[size_t(co)] += kernels::vsum(p, g.data() + int64_t(co) * p);
      }
      if (t.needs_grad(w))
        kernels::gemm_nt(cout, int(p), ck, g.data(), col->data(), t.grad(w).data(), true);
      if (t.needs_grad(x)) {
        Tensor<T> dcol({ck, int(p)});
        kernels::gemm_tn(ck, cout, int(p), t.val(w).data(), g.data(), dcol.data(), false);
        col2im_add(dcol.data(), cin, h, wd, ksize, stride, pad, oh, ow, t.grad(x).data());
      }
    });
  }

  // Nearest-neighbor 2x upsampling of [C,H,W].
  int upsample2x(int a) {
    const Tensor<T>& av = val(a);
    if (av.ndim() != 3) throw ShapeMismatch("upsample2x");
    int c = av.shape[0], h = av.shape[1], w = av.shape[2];
    Tensor<T> y({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          T v = av.v[(size_t(ch) * h + r) * w + col];
          size_t base = (size_t(ch) * 2 * h + 2 * r) * 2 * w + 2 * col;
          y.v[base] = v;
          y.v[base + 1] = v;
          y.v[base + 2 * w] = v;
          y.v[base + 2 * w + 1] = v;
        }
    return make(std::move(y), {a}, [a, c, h, w](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      Tensor<T>& da = t.grad(a);
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r)
          for (int col = 0; col < w; ++col) {
            size_t base = (size_t(ch) * 2 * h + 2 * r) * 2 * w + 2 * col;
            da.v[(size_t(ch) * h + r) * w + col] +=
                g.v[base] + g.v[base + 1] + g.v[base + 2 * w] + g.v[base + 2 * w + 1];
          }
    });
  }

  // ---- losses ----

  // y = -ln(a + eps), elementwise.
  int neg_log(int a, double eps = 1e-8) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.shape);
    for (int64_t i = 0; i < y.numel(); ++i) y.v[i] = -std::log(av.v[i] + T(eps));
    return make(std::move(y), {a}, [a, eps](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& x = t.val(a);
      Tensor<T>& da = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) da.v[i] -= g.v[i] / (x.v[i] + T(eps));
    });
  }

  // Elementwise binary cross-entropy on probabilities against a constant
  // target, with eps-clamped logs: -(t ln(p+eps) + (1-t) ln(1-p+eps)).
  int bce_prob(int p, Tensor<T> target, double eps = 1e-8) {
    const Tensor<T>& pv = val(p);
    if (pv.numel() != target.numel()) throw ShapeMismatch("bce_prob");
    Tensor<T> y(pv.shape);
    for (int64_t i = 0; i < y.numel(); ++i) {
      T t = target.v[i];
      y.v[i] = -(t * std::log(pv.v[i] + T(eps)) + (T(1) - t) * std::log(T(1) - pv.v[i] + T(eps)));
    }
    auto tp = std::make_shared<Tensor<T>>(std::move(target));
    return make(std::move(y), {p}, [p, tp, eps](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& pv = t.val(p);
      Tensor<T>& dp = t.grad(p);
      for (int64_t i = 0; i < g.numel(); ++i) {
        T tt = tp->v[i];
        dp.v[i] += g.v[i] * (-tt / (pv.v[i] + T(eps)) + (T(1) - tt) / (T(1) - pv.v[i] + T(eps)));
      }
    });
  }

  // Numerically stable BCE on logits: max(z,0) - z*t + log1p(exp(-|z|)).
  int bce_logits(int z, Tensor<T> target) {
    const Tensor<T>& zv = val(z);
    if (zv.numel() != target.numel()) throw ShapeMismatch("bce_logits");
    Tensor<T> y(zv.shape);
    for (int64_t i = 0; i < y.numel(); ++i) {
      T zi = zv.v[i];
      y.v[i] = std::max(zi, T(0)) - zi * target.v[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    auto tp = std::make_shared<Tensor<T>>(std::move(target));
    return make(std::move(y), {z}, [z, tp](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& zv = t.val(z);
      Tensor<T>& dz = t.grad(z);
      for (int64_t i = 0; i < g.numel(); ++i)
        dz.v[i] += g.v[i] * (sigmoid_scalar(zv.v[i]) - tp->v[i]);
    });
  }

  // Soft Dice loss against a constant target: 1 - (2*sum(p*t)+s)/(sum(p)+sum(t)+s).
  int dice_prob(int p, Tensor<T> target, double smooth = 1.0) {
    const Tensor<T>& pv = val(p);
    if (pv.numel() != target.numel()) throw ShapeMismatch("dice_prob");
    T inter = kernels::vdot(pv.numel(), pv.data(), target.data());
    T sp = kernels::vsum(pv.numel(), pv.data());
    T st = kernels::vsum(target.numel(), target.data());
    T num = T(2) * inter + T(smooth);
    T den = sp + st + T(smooth);
    Tensor<T> y({1});
    y.v[0] = T(1) - num / den;
    auto tp = std::make_shared<Tensor<T>>(std::move(target));
    return make(std::move(y), {p}, [p, tp, num, den](Tape& t, int self) {
      T g = t.grad(self).v[0];
      const Tensor<T>& pv = t.val(p);
      Tensor<T>& dp = t.grad(p);
      T den2 = den * den;
      for (int64_t i = 0; i < pv.numel(); ++i)
        dp.v[i] += g * (-(T(2) * tp->v[i] * den - num) / den2);
    });
  }

  // Row-wise cosine similarity of two [N,C] matrices -> [N]. Norms are
  // guarded by eps2 inside the square root, so zero rows yield similarity 0
  // with finite gradients.
  int cosine_rows(int a, int b, double eps2 = 1e-16) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv) || av.ndim() != 2) throw ShapeMismatch("cosine_rows");
    int n = av.rows(), c = av.cols();
    Tensor<T> y({n});
    for (int r = 0; r < n; ++r) {
      const T* ar = av.data() + int64_t(r) * c;
      const T* br = bv.data() + int64_t(r) * c;
      T dot = kernels::vdot(c, ar, br);
      T na = std::sqrt(kernels::vdot(c, ar, ar) + T(eps2));
      T nb = std::sqrt(kernels::vdot(c, br, br) + T(eps2));
      y.v[size_t(r)] = dot / (na * nb);
    }
    return make(std::move(y), {a, b}, [a, b, n, c, eps2](Tape& t, int self) {
      const Tensor<T>& g = t.grad(self);
      const Tensor<T>& av = t.val(a);
      const Tensor<T>& bv = t.val(b);
      for (int r = 0; r < n; ++r) {
        T gr = g.v[size_t(r)];
        if (gr == T(0)) continue;
        const T* ar = av.data() + int64_t(r) * c;
        const T* br = bv.data() + int64_t(r) * c;
        T dot = kernels::vdot(c, ar, br);
        T sa = kernels::vdot(c, ar, ar) + T(eps2);
        T sb = kernels::vdot(c, br, br) + T(eps2);
        T na = std::sqrt(sa), nb = std::sqrt(sb);
        T inv = T(1) / (na * nb);
        T cval = dot * inv;
        if (t.needs_grad(a)) {
          T* da = t.grad(a).data() + int64_t(r) * c;
          for (int j = 0; j < c; ++j) da[j] += gr * (br[j] * inv - cval * ar[j] / sa);
        }
        if (t.needs_grad(b)) {
          T* db = t.grad(b).data() + int64_t(r) * c;
          for (int j = 0; j < c; ++j) db[j] += gr * (ar[j] * inv - cval * br[j] / sb);
        }
      }
    });
  }

  // ---- backward ----

  // Reverse sweep from a scalar root. `seed` lets callers fold a loss weight
  // (e.g. 1/batch) into the backward pass.
  void backward(int root, T seed = T(1)) {
    if (val(root).numel() != 1) throw ShapeMismatch("backward root must be scalar");
    if (!nodes_[size_t(root)].needs_grad)
      throw Error("backward: root does not require grad (grad disabled or no params)");
    grad(root).v[0] += seed;
    for (int id = root; id >= 0; --id) {
      Node& nd = nodes_[size_t(id)];
      if (nd.bwd && nd.grad.numel() != 0) nd.bwd(*this, id);
    }
  }

  // Push gradients of bound parameter leaves into their Param::grad buffers,
  // in registration order.
  void export_param_grads() {
    for (auto& [p, id] : bindings_) {
      Node& nd = nodes_[size_t(id)];
      if (nd.grad.numel() != 0)
        kernels::axpy(nd.grad.numel(), T(1), nd.grad.data(), p->grad.data());
    }
  }

  static T sigmoid_scalar(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    T e = std::exp(z);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void(Tape&, int)> bwd;
    bool needs_grad = false;
  };

  void check_same(int a, int b, const char* what) {
    if (!val(a).same_shape(val(b)))
      throw ShapeMismatch(std::string(what) + ": " + val(a).shape_str() + " vs " + val(b).shape_str());
  }

  int make(Tensor<T> y, const std::vector<int>& parents, std::function<void(Tape&, int)> bwd) {
    bool ng = false;
    if (grad_enabled)
      for (int p : parents) ng = ng || nodes_[size_t(p)].needs_grad;
    Node nd;
    nd.val = std::move(y);
    nd.needs_grad = ng;
    if (ng) nd.bwd = std::move(bwd);
    nodes_.push_back(std::move(nd));
    return size() - 1;
  }

  static void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int oh, int ow,
                     T* col) {
    int64_t p = int64_t(oh) * ow;
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          T* dst = col + (int64_t(ci) * k * k + int64_t(dy) * k + dx) * p;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride + dy - pad;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride + dx - pad;
              dst[int64_t(oy) * ow + ox] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(int64_t(ci) * h + iy) * w + ix] : T(0);
            }
          }
        }
  }

  static void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad, int oh,
                         int ow, T* dx) {
    int64_t p = int64_t(oh) * ow;
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < k; ++dy)
        for (int dx_ = 0; dx_ < k; ++dx_) {
          const T* src = col + (int64_t(ci) * k * k + int64_t(dy) * k + dx_) * p;
          for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride + dy - pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * stride + dx_ - pad;
              if (ix >= 0 && ix < w) dx[(int64_t(ci) * h + iy) * w + ix] += src[int64_t(oy) * ow + ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Param<T>*, int>> bindings_;
};

}  // namespace poseg
