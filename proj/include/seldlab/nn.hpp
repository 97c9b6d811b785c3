#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "seldlab/kernels.hpp"
#include "seldlab/rng.hpp"

namespace seldlab::nn {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <class S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) { v.assign(numel_of(shape), S(0)); }

    static size_t numel_of(const std::vector<int>& sh) {
        size_t n = 1;
        for (int d : sh) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= size_t(d);
        }
        return n;
    }
    static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }
    static Tensor full(std::vector<int> sh, S val) {
        Tensor t(std::move(sh));
        for (auto& x : t.v) x = val;
        return t;
    }
    static Tensor from(std::vector<int> sh, std::vector<S> vals) {
        Tensor t;
        t.shape = std::move(sh);
        if (vals.size() != numel_of(t.shape)) throw std::invalid_argument("Tensor: value count mismatch");
        t.v = std::move(vals);
        return t;
    }

    size_t numel() const { return v.size(); }
    int rank() const { return int(shape.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) t.v[i] = U(v[i]);
        return t;
    }
};

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

template <class S>
class Graph {
  public:
    using BackFn = std::function<void(Graph&, int)>;

    struct Node {
        Tensor<S> val;
        Tensor<S> grad;  // allocated lazily
        bool grad_init = false;
        bool rg = false;
        BackFn back;
    };

    int leaf(Tensor<S> t, bool requires_grad) {
        Node n;
        n.val = std::move(t);
        n.rg = requires_grad;
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }
    int constant(Tensor<S> t) { return leaf(std::move(t), false); }

    const Tensor<S>& val(int id) const { return nodes_[size_t(id)].val; }
    bool requires_grad(int id) const { return nodes_[size_t(id)].rg; }
    const Tensor<S>& grad(int id) const {
        static const Tensor<S> empty;
        return nodes_[size_t(id)].grad_init ? nodes_[size_t(id)].grad : empty;
    }
    Tensor<S> grad_or_zeros(int id) const {
        if (nodes_[size_t(id)].grad_init) return nodes_[size_t(id)].grad;
        return Tensor<S>::zeros(nodes_[size_t(id)].val.shape);
    }

    Tensor<S>& grad_buf(int id) {
        Node& n = nodes_[size_t(id)];
        if (!n.grad_init) {
            n.grad = Tensor<S>::zeros(n.val.shape);
            n.grad_init = true;
        }
        return n.grad;
    }

    void backward(int root) {
        if (nodes_[size_t(root)].val.numel() != 1)
            throw std::invalid_argument("backward: root must be scalar");
        if (!nodes_[size_t(root)].rg) return;
        grad_buf(root).v[0] = S(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[size_t(id)];
            if (n.rg && n.grad_init && n.back) n.back(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }

    // -- elementwise -------------------------------------------------------

    int add(int a, int b) {
        check_same(a, b, "add");
        Tensor<S> out = val(a);
        kadd(val(b), out);
        return make(std::move(out), {a, b}, [a, b](Graph& g, int id) {
            const auto& gr = g.grad(id);
            if (g.requires_grad(a)) g.accumulate(a, gr);
            if (g.requires_grad(b)) g.accumulate(b, gr);
        });
    }

    int sub(int a, int b) {
        check_same(a, b, "sub");
        Tensor<S> out = val(a);
        const auto& bv = val(b).v;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
        return make(std::move(out), {a, b}, [a, b](Graph& g, int id) {
            const auto& gr = g.grad(id);
            if (g.requires_grad(a)) g.accumulate(a, gr);
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                for (size_t i = 0; i < gr.v.size(); ++i) gb.v[i] -= gr.v[i];
            }
        });
    }

    int mul(int a, int b) {
        check_same(a, b, "mul");
        Tensor<S> out = val(a);
        kmul(val(b), out);
        return make(std::move(out), {a, b}, [a, b](Graph& g, int id) {
            const auto& gr = g.grad(id);
            if (g.requires_grad(a)) {
                auto& ga = g.grad_buf(a);
                const auto& bv = g.val(b).v;
                for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += gr.v[i] * bv[i];
            }
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                const auto& av = g.val(a).v;
                for (size_t i = 0; i < gr.v.size(); ++i) gb.v[i] += gr.v[i] * av[i];
            }
        });
    }

    int scale(int a, S c) {
        Tensor<S> out = val(a);
        for (auto& x : out.v) x *= c;
        return make(std::move(out), {a}, [a, c](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += c * gr.v[i];
        });
    }

    int relu(int a) {
        Tensor<S> out = val(a);
        for (auto& x : out.v) x = x > S(0) ? x : S(0);
        return make(std::move(out), {a}, [a](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            const auto& y = g.val(id).v;
            for (size_t i = 0; i < gr.v.size(); ++i)
                if (y[i] > S(0)) ga.v[i] += gr.v[i];
        });
    }

    int sigmoid(int a) {
        Tensor<S> out = val(a);
        for (auto& x : out.v) x = S(1) / (S(1) + std::exp(-x));
        return make(std::move(out), {a}, [a](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            const auto& y = g.val(id).v;
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += gr.v[i] * y[i] * (S(1) - y[i]);
        });
    }

    int tanh_(int a) {
        Tensor<S> out = val(a);
        for (auto& x : out.v) x = std::tanh(x);
        return make(std::move(out), {a}, [a](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            const auto& y = g.val(id).v;
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += gr.v[i] * (S(1) - y[i] * y[i]);
        });
    }

    // -- shape plumbing ------------------------------------------------------

    int reshape(int a, std::vector<int> sh) {
        if (Tensor<S>::numel_of(sh) != val(a).numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor<S> out;
        out.shape = std::move(sh);
        out.v = val(a).v;
        return make(std::move(out), {a}, [a](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += gr.v[i];
        });
    }

    // [B,N] -> [B,len] starting at column `from`
    int col_slice(int a, int from, int len) {
        const auto& x = val(a);
        if (x.rank() != 2 || from < 0 || from + len > x.dim(1))
            throw std::invalid_argument("col_slice: bad range");
        const int B = x.dim(0), N = x.dim(1);
        Tensor<S> out({B, len});
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < len; ++j) out.v[size_t(b) * len + j] = x.v[size_t(b) * N + from + j];
        return make(std::move(out), {a}, [a, from, len](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            const int B = g.val(a).dim(0), N = g.val(a).dim(1);
            for (int b = 0; b < B; ++b)
                for (int j = 0; j < len; ++j)
                    ga.v[size_t(b) * N + from + j] += gr.v[size_t(b) * len + j];
        });
    }

    int concat_cols(const std::vector<int>& ids) {
        if (ids.empty()) throw std::invalid_argument("concat_cols: empty input");
        const int B = val(ids[0]).dim(0);
        int total = 0;
        for (int id : ids) {
            if (val(id).rank() != 2 || val(id).dim(0) != B)
                throw std::invalid_argument("concat_cols: shape mismatch");
            total += val(id).dim(1);
        }
        Tensor<S> out({B, total});
        int off = 0;
        for (int id : ids) {
            const auto& x = val(id);
            const int n = x.dim(1);
            for (int b = 0; b < B; ++b)
                for (int j = 0; j < n; ++j) out.v[size_t(b) * total + off + j] = x.v[size_t(b) * n + j];
            off += n;
        }
        auto idv = ids;
        return make(std::move(out), ids, [idv, B, total](Graph& g, int id) {
            const auto& gr = g.grad(id);
            int off = 0;
            for (int src : idv) {
                const int n = g.val(src).dim(1);
                if (g.requires_grad(src)) {
                    auto& gs = g.grad_buf(src);
                    for (int b = 0; b < B; ++b)
                        for (int j = 0; j < n; ++j)
                            gs.v[size_t(b) * n + j] += gr.v[size_t(b) * total + off + j];
                }
                off += n;
            }
        });
    }

    // [B,T,C] -> [B,C] at time t
    int select_time(int a, int t) {
        const auto& x = val(a);
        if (x.rank() != 3 || t < 0 || t >= x.dim(1)) throw std::invalid_argument("select_time: bad index");
        const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
        Tensor<S> out({B, C});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) out.v[size_t(b) * C + c] = x.v[(size_t(b) * T + t) * C + c];
        return make(std::move(out), {a}, [a, t](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            const int B = g.val(a).dim(0), T = g.val(a).dim(1), C = g.val(a).dim(2);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    ga.v[(size_t(b) * T + t) * C + c] += gr.v[size_t(b) * C + c];
        });
    }

    // T tensors of [B,C] -> [B,T,C]
    int stack_time(const std::vector<int>& ids) {
        if (ids.empty()) throw std::invalid_argument("stack_time: empty input");
        const int B = val(ids[0]).dim(0), C = val(ids[0]).dim(1);
        const int T = int(ids.size());
        Tensor<S> out({B, T, C});
        for (int t = 0; t < T; ++t) {
            const auto& x = val(ids[size_t(t)]);
            if (x.rank() != 2 || x.dim(0) != B || x.dim(1) != C)
                throw std::invalid_argument("stack_time: shape mismatch");
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) out.v[(size_t(b) * T + t) * C + c] = x.v[size_t(b) * C + c];
        }
        auto idv = ids;
        return make(std::move(out), ids, [idv, B, C](Graph& g, int id) {
            const auto& gr = g.grad(id);
            const int T = int(idv.size());
            for (int t = 0; t < T; ++t) {
                const int src = idv[size_t(t)];
                if (!g.requires_grad(src)) continue;
                auto& gs = g.grad_buf(src);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        gs.v[size_t(b) * C + c] += gr.v[(size_t(b) * T + t) * C + c];
            }
        });
    }

    // [B,C,T,F] -> [B,T,C*F] (sequence features for the recurrent stage)
    int chw_to_seq(int a) {
        const auto& x = val(a);
        if (x.rank() != 4) throw std::invalid_argument("chw_to_seq: expected 4-D input");
        const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
        Tensor<S> out({B, T, C * F});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    for (int f = 0; f < F; ++f)
                        out.v[(size_t(b) * T + t) * size_t(C * F) + size_t(c) * F + f] =
                            x.v[((size_t(b) * C + c) * T + t) * F + f];
        return make(std::move(out), {a}, [a](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            const auto& x = g.val(a);
            const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < T; ++t)
                        for (int f = 0; f < F; ++f)
                            ga.v[((size_t(b) * C + c) * T + t) * F + f] +=
                                gr.v[(size_t(b) * T + t) * size_t(C * F) + size_t(c) * F + f];
        });
    }

    // -- linear algebra ------------------------------------------------------

    int matmul(int a, int b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
            throw std::invalid_argument("matmul: shape mismatch");
        const int M = A.dim(0), K = A.dim(1), N = B.dim(1);
        Tensor<S> out({M, N});
        kern::gemm_nn<S>(size_t(M), size_t(N), size_t(K), A.v.data(), size_t(K), B.v.data(),
                         size_t(N), out.v.data(), size_t(N), false);
        return make(std::move(out), {a, b}, [a, b, M, K, N](Graph& g, int id) {
            const auto& gr = g.grad(id);
            if (g.requires_grad(a)) {
                auto& ga = g.grad_buf(a);
                kern::gemm_nt<S>(size_t(M), size_t(K), size_t(N), gr.v.data(), size_t(N),
                                 g.val(b).v.data(), size_t(N), ga.v.data(), size_t(K), true);
            }
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                kern::gemm_tn<S>(size_t(K), size_t(N), size_t(M), g.val(a).v.data(), size_t(K),
                                 gr.v.data(), size_t(N), gb.v.data(), size_t(N), true);
            }
        });
    }

    // x[M,N] + row vector b[N]
    int add_rowvec(int a, int b) {
        const auto& x = val(a);
        const auto& r = val(b);
        if (x.rank() != 2 || r.numel() != size_t(x.dim(1)))
            throw std::invalid_argument("add_rowvec: shape mismatch");
        const int M = x.dim(0), N = x.dim(1);
        Tensor<S> out = x;
        for (int m = 0; m < M; ++m)
            for (int j = 0; j < N; ++j) out.v[size_t(m) * N + j] += r.v[size_t(j)];
        return make(std::move(out), {a, b}, [a, b, M, N](Graph& g, int id) {
            const auto& gr = g.grad(id);
            if (g.requires_grad(a)) g.accumulate(a, gr);
            if (g.requires_grad(b)) {
                auto& gb = g.grad_buf(b);
                for (int m = 0; m < M; ++m)
                    for (int j = 0; j < N; ++j) gb.v[size_t(j)] += gr.v[size_t(m) * N + j];
            }
        });
    }

    int linear(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

    // -- reductions & losses -------------------------------------------------

    int mean_all(int a) {
        const size_t n = val(a).numel();
        Tensor<S> out({1});
        out.v[0] = ksum(val(a)) / S(n);
        return make(std::move(out), {a}, [a, n](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const S gv = g.grad(id).v[0] / S(n);
            for (auto& x : ga.v) x += gv;
        });
    }

    // mean over one axis of a 2-D tensor
    int mean_over(int a, int axis) {
        const auto& x = val(a);
        if (x.rank() != 2 || (axis != 0 && axis != 1)) throw std::invalid_argument("mean_over: bad axis");
        const int M = x.dim(0), N = x.dim(1);
        if (axis == 0) {
            Tensor<S> out({1, N});
            for (int m = 0; m < M; ++m)
                for (int j = 0; j < N; ++j) out.v[size_t(j)] += x.v[size_t(m) * N + j];
            for (auto& v : out.v) v /= S(M);
            return make(std::move(out), {a}, [a, M, N](Graph& g, int id) {
                if (!g.requires_grad(a)) return;
                auto& ga = g.grad_buf(a);
                const auto& gr = g.grad(id);
                for (int m = 0; m < M; ++m)
                    for (int j = 0; j < N; ++j) ga.v[size_t(m) * N + j] += gr.v[size_t(j)] / S(M);
            });
        }
        Tensor<S> out({M, 1});
        for (int m = 0; m < M; ++m) {
            S acc = S(0);
            for (int j = 0; j < N; ++j) acc += x.v[size_t(m) * N + j];
            out.v[size_t(m)] = acc / S(N);
        }
        return make(std::move(out), {a}, [a, M, N](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            for (int m = 0; m < M; ++m)
                for (int j = 0; j < N; ++j) ga.v[size_t(m) * N + j] += gr.v[size_t(m)] / S(N);
        });
    }

    // mean((pred - target)^2) against a constant target
    int mse(int pred, Tensor<S> target) {
        const auto& p = val(pred);
        if (!p.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
        const size_t n = p.numel();
        S acc = S(0);
        for (size_t i = 0; i < n; ++i) {
            const S d = p.v[i] - target.v[i];
            acc += d * d;
        }
        Tensor<S> out({1});
        out.v[0] = acc / S(n);
        auto tgt = std::make_shared<Tensor<S>>(std::move(target));
        return make(std::move(out), {pred}, [pred, tgt, n](Graph& g, int id) {
            if (!g.requires_grad(pred)) return;
            auto& gp = g.grad_buf(pred);
            const S gv = g.grad(id).v[0] * S(2) / S(n);
            const auto& p = g.val(pred).v;
            for (size_t i = 0; i < n; ++i) gp.v[i] += gv * (p[i] - tgt->v[i]);
        });
    }

    // sum(x .* c) with a constant tensor c
    int inner_const(int a, Tensor<S> c) {
        const auto& x = val(a);
        if (!x.same_shape(c)) throw std::invalid_argument("inner_const: shape mismatch");
        S acc = S(0);
        for (size_t i = 0; i < x.numel(); ++i) acc += x.v[i] * c.v[i];
        Tensor<S> out({1});
        out.v[0] = acc;
        auto cc = std::make_shared<Tensor<S>>(std::move(c));
        return make(std::move(out), {a}, [a, cc](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const S gv = g.grad(id).v[0];
            for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gv * cc->v[i];
        });
    }

    // row-wise L2 normalization of a [1,N] vector: y = v / max(||v||, eps)
    int l2_normalize_row(int a) {
        const auto& x = val(a);
        if (x.rank() != 2 || x.dim(0) != 1) throw std::invalid_argument("l2_normalize_row: expected [1,N]");
        double n2 = 0.0;
        for (S v : x.v) n2 += double(v) * double(v);
        const S inv = S(1.0 / std::max(std::sqrt(n2), 1e-12));
        Tensor<S> out = x;
        for (auto& v : out.v) v *= inv;
        return make(std::move(out), {a}, [a, inv](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            const auto& gr = g.grad(id);
            const auto& y = g.val(id).v;
            S dot = S(0);
            for (size_t i = 0; i < gr.v.size(); ++i) dot += gr.v[i] * y[i];
            auto& ga = g.grad_buf(a);
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[i] += inv * (gr.v[i] - dot * y[i]);
        });
    }

    int add_scalars(const std::vector<int>& ids) {
        if (ids.empty()) throw std::invalid_argument("add_scalars: empty");
        Tensor<S> out({1});
        for (int id : ids) out.v[0] += val(id).v[0];
        auto idv = ids;
        return make(std::move(out), ids, [idv](Graph& g, int id) {
            const S gv = g.grad(id).v[0];
            for (int src : idv)
                if (g.requires_grad(src)) g.grad_buf(src).v[0] += gv;
        });
    }

    // y = v[idx] * W  for a vector node v and constant tensor W  (layer-wise
    // parameter attenuation)
    int scale_const_by_entry(Tensor<S> W, int vec, int idx) {
        const auto& v = val(vec);
        if (idx < 0 || size_t(idx) >= v.numel()) throw std::invalid_argument("scale_const_by_entry: bad index");
        Tensor<S> out = W;
        const S s = v.v[size_t(idx)];
        for (auto& x : out.v) x *= s;
        auto w = std::make_shared<Tensor<S>>(std::move(W));
        return make(std::move(out), {vec}, [vec, idx, w](Graph& g, int id) {
            if (!g.requires_grad(vec)) return;
            const auto& gr = g.grad(id);
            S acc = S(0);
            for (size_t i = 0; i < gr.v.size(); ++i) acc += gr.v[i] * w->v[i];
            g.grad_buf(vec).v[size_t(idx)] += acc;
        });
    }

    // -- structured layers -----------------------------------------------------

    int maxpool2d(int a, int pt, int pf) {
        const auto& x = val(a);
        if (x.rank() != 4) throw std::invalid_argument("maxpool2d: expected [B,C,T,F]");
        const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
        if (T % pt != 0 || F % pf != 0) throw std::invalid_argument("maxpool2d: size not divisible");
        const int To = T / pt, Fo = F / pf;
        Tensor<S> out({B, C, To, Fo});
        auto arg = std::make_shared<std::vector<int32_t>>(out.numel());
        size_t o = 0;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int to = 0; to < To; ++to)
                    for (int fo = 0; fo < Fo; ++fo, ++o) {
                        S best = -std::numeric_limits<S>::infinity();
                        int32_t bi = 0;
                        for (int dt = 0; dt < pt; ++dt)
                            for (int df = 0; df < pf; ++df) {
                                const size_t ix =
                                    ((size_t(b) * C + c) * T + to * pt + dt) * F + fo * pf + df;
                                if (x.v[ix] > best) {
                                    best = x.v[ix];
                                    bi = int32_t(ix);
                                }
                            }
                        out.v[o] = best;
                        (*arg)[o] = bi;
                    }
        return make(std::move(out), {a}, [a, arg](Graph& g, int id) {
            if (!g.requires_grad(a)) return;
            auto& ga = g.grad_buf(a);
            const auto& gr = g.grad(id);
            for (size_t i = 0; i < gr.v.size(); ++i) ga.v[size_t((*arg)[i])] += gr.v[i];
        });
    }

    // 3x3-style conv, stride 1, zero padding `pad`; w[Cout,Cin,kh,kw], b[Cout]
    int conv2d(int a, int w, int b, int pad) {
        const auto& x = val(a);
        const auto& wt = val(w);
        if (x.rank() != 4 || wt.rank() != 4 || x.dim(1) != wt.dim(1))
            throw std::invalid_argument("conv2d: shape mismatch");
        const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
        if (val(b).numel() != size_t(Cout)) throw std::invalid_argument("conv2d: bias shape mismatch");
        const int Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
        if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");

        const int K = Cin * kh * kw, N = Ho * Wo;
        Tensor<S> out({B, Cout, Ho, Wo});
        std::vector<S> col(size_t(K) * N);
        for (int bi = 0; bi < B; ++bi) {
            im2col(x.v.data() + size_t(bi) * Cin * H * W, Cin, H, W, kh, kw, pad, col.data(), Ho, Wo);
            kern::gemm_nn<S>(size_t(Cout), size_t(N), size_t(K), wt.v.data(), size_t(K), col.data(),
                             size_t(N), out.v.data() + size_t(bi) * Cout * N, size_t(N), false);
            for (int co = 0; co < Cout; ++co) {
                const S bv = val(b).v[size_t(co)];
                S* row = out.v.data() + (size_t(bi) * Cout + co) * N;
                for (int j = 0; j < N; ++j) row[j] += bv;
            }
        }
        return make(std::move(out), {a, w, b},
                    [a, w, b, pad, B, Cin, H, W, Cout, kh, kw, Ho, Wo, K, N](Graph& g, int id) {
                        const auto& gr = g.grad(id);
                        std::vector<S> col(size_t(K) * N);
                        std::vector<S> dcol(size_t(K) * N);
                        for (int bi = 0; bi < B; ++bi) {
                            const S* dy = gr.v.data() + size_t(bi) * Cout * N;
                            if (g.requires_grad(w) || g.requires_grad(a))
                                im2col(g.val(a).v.data() + size_t(bi) * Cin * H * W, Cin, H, W, kh,
                                       kw, pad, col.data(), Ho, Wo);
                            if (g.requires_grad(w)) {
                                auto& gw = g.grad_buf(w);
                                kern::gemm_nt<S>(size_t(Cout), size_t(K), size_t(N), dy, size_t(N),
                                                 col.data(), size_t(N), gw.v.data(), size_t(K), true);
                            }
                            if (g.requires_grad(b)) {
                                auto& gb = g.grad_buf(b);
                                for (int co = 0; co < Cout; ++co) {
                                    S acc = S(0);
                                    const S* row = dy + size_t(co) * N;
                                    for (int j = 0; j < N; ++j) acc += row[j];
                                    gb.v[size_t(co)] += acc;
                                }
                            }
                            if (g.requires_grad(a)) {
                                kern::gemm_tn<S>(size_t(K), size_t(N), size_t(Cout),
                                                 g.val(w).v.data(), size_t(K), dy, size_t(N),
                                                 dcol.data(), size_t(N), false);
                                auto& ga = g.grad_buf(a);
                                col2im(dcol.data(), Cin, H, W, kh, kw, pad,
                                       ga.v.data() + size_t(bi) * Cin * H * W, Ho, Wo);
                            }
                        }
                    });
    }

    // BatchNorm2d over [B,C,T,F]. In train mode normalizes by batch statistics
    // and reports them through *batch_mean / *batch_var_unbiased (for the
    // caller's running-stat update); in eval mode uses the provided running
    // statistics. eps = 1e-5.
    int batchnorm2d(int a, int gamma, int beta, const Tensor<S>& run_mean, const Tensor<S>& run_var,
                    bool train, Tensor<S>* batch_mean = nullptr, Tensor<S>* batch_var_unbiased = nullptr) {
        const auto& x = val(a);
        if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: expected [B,C,T,F]");
        const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
        const size_t plane = size_t(T) * F;
        const size_t n = size_t(B) * plane;
        if (val(gamma).numel() != size_t(C) || val(beta).numel() != size_t(C))
            throw std::invalid_argument("batchnorm2d: affine shape mismatch");
        const S eps = S(1e-5);

        auto mean = std::make_shared<std::vector<S>>(size_t(C), S(0));
        auto istd = std::make_shared<std::vector<S>>(size_t(C), S(0));
        if (train) {
            for (int c = 0; c < C; ++c) {
                S acc = S(0);
                for (int b = 0; b < B; ++b) {
                    const S* p = x.v.data() + (size_t(b) * C + c) * plane;
                    acc += ksum_raw(p, plane);
                }
                (*mean)[size_t(c)] = acc / S(n);
            }
            for (int c = 0; c < C; ++c) {
                const S m = (*mean)[size_t(c)];
                S acc = S(0);
                for (int b = 0; b < B; ++b) {
                    const S* p = x.v.data() + (size_t(b) * C + c) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        const S d = p[i] - m;
                        acc += d * d;
                    }
                }
                const S var = acc / S(n);
                (*istd)[size_t(c)] = S(1) / std::sqrt(var + eps);
                if (batch_mean) batch_mean->v[size_t(c)] = m;
                if (batch_var_unbiased)
                    batch_var_unbiased->v[size_t(c)] = n > 1 ? acc / S(n - 1) : var;
            }
        } else {
            if (run_mean.numel() != size_t(C) || run_var.numel() != size_t(C))
                throw std::invalid_argument("batchnorm2d: running-stat shape mismatch");
            for (int c = 0; c < C; ++c) {
                (*mean)[size_t(c)] = run_mean.v[size_t(c)];
                (*istd)[size_t(c)] = S(1) / std::sqrt(run_var.v[size_t(c)] + eps);
            }
        }

        Tensor<S> out(x.shape);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const S m = (*mean)[size_t(c)], is = (*istd)[size_t(c)];
                const S gm = val(gamma).v[size_t(c)], bt = val(beta).v[size_t(c)];
                const S* p = x.v.data() + (size_t(b) * C + c) * plane;
                S* o = out.v.data() + (size_t(b) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) o[i] = (p[i] - m) * is * gm + bt;
            }

        return make(std::move(out), {a, gamma, beta},
                    [a, gamma, beta, mean, istd, train, B, C, plane, n](Graph& g, int id) {
                        const auto& gr = g.grad(id);
                        const auto& x = g.val(a);
                        // per-channel reductions
                        std::vector<S> sum_g(size_t(C), S(0)), sum_gx(size_t(C), S(0));
                        for (int b = 0; b < B; ++b)
                            for (int c = 0; c < C; ++c) {
                                const S m = (*mean)[size_t(c)], is = (*istd)[size_t(c)];
                                const S* gp = gr.v.data() + (size_t(b) * C + c) * plane;
                                const S* xp = x.v.data() + (size_t(b) * C + c) * plane;
                                S sg = S(0), sgx = S(0);
                                for (size_t i = 0; i < plane; ++i) {
                                    sg += gp[i];
                                    sgx += gp[i] * (xp[i] - m) * is;
                                }
                                sum_g[size_t(c)] += sg;
                                sum_gx[size_t(c)] += sgx;
                            }
                        if (g.requires_grad(gamma)) {
                            auto& gg = g.grad_buf(gamma);
                            for (int c = 0; c < C; ++c) gg.v[size_t(c)] += sum_gx[size_t(c)];
                        }
                        if (g.requires_grad(beta)) {
                            auto& gb = g.grad_buf(beta);
                            for (int c = 0; c < C; ++c) gb.v[size_t(c)] += sum_g[size_t(c)];
                        }
                        if (g.requires_grad(a)) {
                            auto& ga = g.grad_buf(a);
                            for (int b = 0; b < B; ++b)
                                for (int c = 0; c < C; ++c) {
                                    const S m = (*mean)[size_t(c)], is = (*istd)[size_t(c)];
                                    const S gm = g.val(gamma).v[size_t(c)];
                                    const S* gp = gr.v.data() + (size_t(b) * C + c) * plane;
                                    const S* xp = x.v.data() + (size_t(b) * C + c) * plane;
                                    S* gout = ga.v.data() + (size_t(b) * C + c) * plane;
                                    if (train) {
                                        const S mg = sum_g[size_t(c)] / S(n);
                                        const S mgx = sum_gx[size_t(c)] / S(n);
                                        for (size_t i = 0; i < plane; ++i) {
                                            const S xh = (xp[i] - m) * is;
                                            gout[i] += gm * is * (gp[i] - mg - xh * mgx);
                                        }
                                    } else {
                                        for (size_t i = 0; i < plane; ++i) gout[i] += gm * is * gp[i];
                                    }
                                }
                        }
                    });
    }

  private:
    static void im2col(const S* x, int Cin, int H, int W, int kh, int kw, int pad, S* col, int Ho,
                       int Wo) {
        int k = 0;
        for (int ci = 0; ci < Cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx, ++k) {
                    S* row = col + size_t(k) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy + ky - pad;
                        S* dst = row + size_t(oy) * Wo;
                        if (iy < 0 || iy >= H) {
                            for (int ox = 0; ox < Wo; ++ox) dst[ox] = S(0);
                            continue;
                        }
                        const S* src = x + (size_t(ci) * H + iy) * W;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox + kx - pad;
                            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                        }
                    }
                }
    }

    static void col2im(const S* col, int Cin, int H, int W, int kh, int kw, int pad, S* x, int Ho,
                       int Wo) {
        int k = 0;
        for (int ci = 0; ci < Cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx, ++k) {
                    const S* row = col + size_t(k) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        S* dst = x + (size_t(ci) * H + iy) * W;
                        const S* src = row + size_t(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox + kx - pad;
                            if (ix >= 0 && ix < W) dst[ix] += src[ox];
                        }
                    }
                }
    }

    static S ksum_raw(const S* p, size_t n) {
        if constexpr (std::is_same_v<S, float>)
            return kern::table().ssum(p, n);
        else
            return kern::table().dsum(p, n);
    }
    static S ksum(const Tensor<S>& t) { return ksum_raw(t.v.data(), t.numel()); }
    static void kadd(const Tensor<S>& b, Tensor<S>& out) {
        if constexpr (std::is_same_v<S, float>)
            kern::table().sadd(out.v.data(), b.v.data(), out.v.data(), out.numel());
        else
            kern::table().dadd(out.v.data(), b.v.data(), out.v.data(), out.numel());
    }
    static void kmul(const Tensor<S>& b, Tensor<S>& out) {
        if constexpr (std::is_same_v<S, float>)
            kern::table().smul(out.v.data(), b.v.data(), out.v.data(), out.numel());
        else
            kern::table().dmul(out.v.data(), b.v.data(), out.v.data(), out.numel());
    }

    void check_same(int a, int b, const char* who) {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }

    int make(Tensor<S> out, std::vector<int> parents, BackFn back) {
        Node n;
        n.val = std::move(out);
        bool rg = false;
        for (int p : parents) rg = rg || nodes_[size_t(p)].rg;
        n.rg = rg;
        if (rg) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    void accumulate(int id, const Tensor<S>& g) {
        auto& dst = grad_buf(id);
        if constexpr (std::is_same_v<S, float>)
            kern::table().sadd(dst.v.data(), g.v.data(), dst.v.data(), dst.numel());
        else
            kern::table().dadd(dst.v.data(), g.v.data(), dst.v.data(), dst.numel());
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Parameter sets
// ---------------------------------------------------------------------------

template <class S>
struct ParamSet {
    struct Entry {
        std::string name;
        Tensor<S> t;
        int layer = 0;        // layer index for attenuation (one per weight-bearing module)
        bool trainable = true;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;

    int add(const std::string& name, Tensor<S> t, int layer, bool trainable = true) {
        if (index.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
        index[name] = int(entries.size());
        entries.push_back({name, std::move(t), layer, trainable});
        return int(entries.size()) - 1;
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    const Entry& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
        return entries[size_t(it->second)];
    }
    Entry& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::invalid_argument("ParamSet: unknown name " + name);
        return entries[size_t(it->second)];
    }
    size_t size() const { return entries.size(); }

    int num_layers() const {
        int p = 0;
        for (const auto& e : entries) p = std::max(p, e.layer + 1);
        return p;
    }

    bool aligned_with(const ParamSet& o) const {
        if (entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name != o.entries[i].name ||
                entries[i].t.shape != o.entries[i].t.shape)
                return false;
        return true;
    }

    template <class U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& e : entries) out.add(e.name, e.t.template cast<U>(), e.layer, e.trainable);
        return out;
    }
};

template <class S>
using Grads = std::vector<Tensor<S>>;  // aligned with ParamSet entry order

// Bind every entry as a graph leaf (trainable entries require grad).
template <class S>
struct BoundParams {
    std::vector<int> node;  // aligned with entries
    std::unordered_map<std::string, int> node_of;

    int operator[](const std::string& name) const {
        auto it = node_of.find(name);
        if (it == node_of.end()) throw std::invalid_argument("BoundParams: unknown name " + name);
        return it->second;
    }
};

template <class S>
BoundParams<S> bind_params(Graph<S>& g, const ParamSet<S>& p) {
    BoundParams<S> b;
    for (const auto& e : p.entries) {
        const int id = g.leaf(e.t, e.trainable);
        b.node.push_back(id);
        b.node_of[e.name] = id;
    }
    return b;
}

template <class S>
Grads<S> collect_grads(const Graph<S>& g, const BoundParams<S>& b, const ParamSet<S>& p) {
    Grads<S> out;
    for (size_t i = 0; i < p.entries.size(); ++i) out.push_back(g.grad_or_zeros(b.node[i]));
    return out;
}

// accumulate / scale helpers for averaging gradients across episodes
template <class S>
void grads_axpy(Grads<S>& acc, const Grads<S>& g, S a) {
    if (acc.empty()) {
        acc = g;
        for (auto& t : acc)
            for (auto& x : t.v) x *= a;
        return;
    }
    for (size_t i = 0; i < acc.size(); ++i)
        for (size_t j = 0; j < acc[i].v.size(); ++j) acc[i].v[j] += a * g[i].v[j];
}

// ---------------------------------------------------------------------------
// Optimizers (pure functional: inputs untouched)
// ---------------------------------------------------------------------------

template <class S>
ParamSet<S> sgd_step(const ParamSet<S>& p, const Grads<S>& g, double lr) {
    if (g.size() != p.entries.size()) throw std::invalid_argument("sgd_step: gradient alignment");
    ParamSet<S> out = p;
    for (size_t i = 0; i < out.entries.size(); ++i) {
        auto& e = out.entries[i];
        if (!e.trainable) continue;
        if (g[i].numel() != e.t.numel()) throw std::invalid_argument("sgd_step: gradient shape");
        for (size_t j = 0; j < e.t.v.size(); ++j) e.t.v[j] -= S(lr) * g[i].v[j];
    }
    return out;
}

template <class S>
struct AdamWState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    uint64_t step = 0;
    std::vector<Tensor<S>> m, v;  // aligned with entries

    static AdamWState init(const ParamSet<S>& p, double weight_decay) {
        AdamWState s;
        s.weight_decay = weight_decay;
        for (const auto& e : p.entries) {
            s.m.push_back(Tensor<S>::zeros(e.t.shape));
            s.v.push_back(Tensor<S>::zeros(e.t.shape));
        }
        return s;
    }
};

template <class S>
std::pair<ParamSet<S>, AdamWState<S>> adamw_step(const ParamSet<S>& p, const Grads<S>& g,
                                                 const AdamWState<S>& st, double lr) {
    if (g.size() != p.entries.size() || st.m.size() != p.entries.size())
        throw std::invalid_argument("adamw_step: alignment");
    ParamSet<S> out = p;
    AdamWState<S> s = st;
    s.step += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, double(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, double(s.step));
    for (size_t i = 0; i < out.entries.size(); ++i) {
        auto& e = out.entries[i];
        if (!e.trainable) continue;
        auto& m = s.m[i].v;
        auto& v = s.v[i].v;
        for (size_t j = 0; j < e.t.v.size(); ++j) {
            const double gj = double(g[i].v[j]);
            m[j] = S(s.beta1 * double(m[j]) + (1.0 - s.beta1) * gj);
            v[j] = S(s.beta2 * double(v[j]) + (1.0 - s.beta2) * gj * gj);
            const double mhat = double(m[j]) / bc1;
            const double vhat = double(v[j]) / bc2;
            const double upd = lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * double(e.t.v[j]));
            e.t.v[j] = S(double(e.t.v[j]) - upd);
        }
    }
    return {std::move(out), std::move(s)};
}

// ---------------------------------------------------------------------------
// Gradient checking (64-bit)
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<std::pair<std::string, double>> per_param;
    bool ok(double tol) const { return max_rel_err < tol; }
};

// build must bind the params itself and return the scalar loss node.
inline GradCheckReport grad_check(
    const ParamSet<double>& params,
    const std::function<int(Graph<double>&, const BoundParams<double>&)>& build, double eps = 1e-4) {
    Graph<double> g;
    auto bound = bind_params(g, params);
    const int loss = build(g, bound);
    g.backward(loss);
    const auto analytic = collect_grads(g, bound, params);

    GradCheckReport rep;
    for (size_t i = 0; i < params.entries.size(); ++i) {
        if (!params.entries[i].trainable) continue;
        double worst = 0.0;
        for (size_t j = 0; j < params.entries[i].t.numel(); ++j) {
            ParamSet<double> pp = params;
            pp.entries[i].t.v[j] += eps;
            Graph<double> gp;
            const double lp = gp.val(build(gp, bind_params(gp, pp))).v[0];
            pp.entries[i].t.v[j] -= 2 * eps;
            Graph<double> gm;
            const double lm = gm.val(build(gm, bind_params(gm, pp))).v[0];
            const double num = (lp - lm) / (2 * eps);
            const double ana = analytic[i].v[j];
            const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
            worst = std::max(worst, rel);
        }
        rep.per_param.push_back({params.entries[i].name, worst});
        rep.max_rel_err = std::max(rep.max_rel_err, worst);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> uniform_init(std::vector<int> shape, double bound, Rng& rng) {
    Tensor<S> t(std::move(shape));
    for (auto& x : t.v) x = S(rng.uniform(-bound, bound));
    return t;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::vector<std::pair<std::string, ParamSet<float>>> sections;
    std::optional<AdamWState<float>> opt;  // aligned with the concatenation of all sections
    std::string config_json;

    const ParamSet<float>& section(const std::string& name) const;
    bool has_section(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seldlab::nn
