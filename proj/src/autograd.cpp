#include "rpr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "rpr/common.hpp"
#include "rpr/kernels.hpp"

namespace rpr::ag {

namespace {
thread_local bool g_grad_enabled = true;

bool any_requires(const std::vector<Var>& ps) {
    for (const auto& p : ps)
        if (p && p->requires_grad) return true;
    return false;
}

void check(bool ok, const char* msg) {
    if (!ok) throw validation_error(msg);
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

Var leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = requires_grad;
    return n;
}

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backfn) {
    if (!g_grad_enabled || !any_requires(parents)) return constant(std::move(val));
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
    return n;
}

void backward(const Var& root) {
    if (!root || root->val.numel() != 1) throw validation_error("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i].get();
            ++i;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->grad.v.empty() && n != root.get()) n->grad.fill(0.0);
    }
    root->ensure_grad().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && !n->grad.v.empty()) n->backfn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "add: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i) out.v[(size_t)i] += b->val.v[(size_t)i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "sub: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i) out.v[(size_t)i] -= b->val.v[(size_t)i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] -= n.grad.v[(size_t)i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "mul: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i) out.v[(size_t)i] *= b->val.v[(size_t)i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i)
                g.v[(size_t)i] += n.grad.v[(size_t)i] * b->val.v[(size_t)i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i)
                g.v[(size_t)i] += n.grad.v[(size_t)i] * a->val.v[(size_t)i];
        }
    });
}

Var div_(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "div: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i) out.v[(size_t)i] /= b->val.v[(size_t)i];
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i)
                g.v[(size_t)i] += n.grad.v[(size_t)i] / b->val.v[(size_t)i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) {
                const double bv = b->val.v[(size_t)i];
                g.v[(size_t)i] -= n.grad.v[(size_t)i] * a->val.v[(size_t)i] / (bv * bv);
            }
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (double& x : out.v) x *= s;
    return make_op(std::move(out), {a}, [a, s](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += s * n.grad.v[(size_t)i];
    });
}

Var add_const(const Var& a, double c) {
    Tensor out = a->val;
    for (double& x : out.v) x += c;
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var abs_(const Var& a) {
    Tensor out = a->val;
    for (double& x : out.v) x = std::fabs(x);
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) {
            const double x = a->val.v[(size_t)i];
            g.v[(size_t)i] += n.grad.v[(size_t)i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
        }
    });
}

Var log_(const Var& a) {
    Tensor out = a->val;
    for (double& x : out.v) {
        if (x <= 0) throw numeric_error("log of non-positive value");
        x = std::log(x);
    }
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i)
            g.v[(size_t)i] += n.grad.v[(size_t)i] / a->val.v[(size_t)i];
    });
}

Var exp_(const Var& a) {
    Tensor out = a->val;
    for (double& x : out.v) x = std::exp(x);
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i)
            g.v[(size_t)i] += n.grad.v[(size_t)i] * n.val.v[(size_t)i];
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->val;
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) {
            const double y = n.val.v[(size_t)i];
            g.v[(size_t)i] += n.grad.v[(size_t)i] * y * (1.0 - y);
        }
    });
}

Var elu(const Var& a) {
    Tensor out = a->val;
    for (double& x : out.v) x = x > 0 ? x : std::expm1(x);
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) {
            const double x = a->val.v[(size_t)i];
            g.v[(size_t)i] += n.grad.v[(size_t)i] * (x > 0 ? 1.0 : std::exp(x));
        }
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out = a->val;
    for (double& x : out.v) x = std::clamp(x, lo, hi);
    return make_op(std::move(out), {a}, [a, lo, hi](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) {
            const double x = a->val.v[(size_t)i];
            if (x > lo && x < hi) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
    });
}

Var min2(const Var& a, const Var& b) {
    check(a->val.same_shape(b->val), "min2: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i)
        out.v[(size_t)i] = std::min(a->val.v[(size_t)i], b->val.v[(size_t)i]);
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        for (long long i = 0; i < n.val.numel(); ++i) {
            const bool take_a = a->val.v[(size_t)i] <= b->val.v[(size_t)i];
            Node* dst = take_a ? a.get() : b.get();
            if (dst->requires_grad) dst->ensure_grad().v[(size_t)i] += n.grad.v[(size_t)i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / broadcast
// ---------------------------------------------------------------------------

Var mean_all(const Var& a) {
    Tensor out = Tensor::scalar(a->val.mean());
    const double inv = 1.0 / (double)a->val.numel();
    return make_op(std::move(out), {a}, [a, inv](Node& n) {
        auto& g = a->ensure_grad();
        const double go = n.grad.v[0] * inv;
        for (double& x : g.v) x += go;
    });
}

Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a->val.sum());
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        const double go = n.grad.v[0];
        for (double& x : g.v) x += go;
    });
}

Var div_by_scalar(const Var& a, const Var& s) {
    check(s->val.numel() == 1, "div_by_scalar: scalar expected");
    const double sv = s->val.v[0];
    Tensor out = a->val;
    for (double& x : out.v) x /= sv;
    return make_op(std::move(out), {a, s}, [a, s, sv](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i] / sv;
        }
        if (s->requires_grad) {
            double acc = 0.0;
            for (long long i = 0; i < n.val.numel(); ++i)
                acc += n.grad.v[(size_t)i] * a->val.v[(size_t)i];
            s->ensure_grad().v[0] -= acc / (sv * sv);
        }
    });
}

Var sub_scalarvar(const Var& a, const Var& s) {
    check(s->val.numel() == 1, "sub_scalarvar: scalar expected");
    const double sv = s->val.v[0];
    Tensor out = a->val;
    for (double& x : out.v) x -= sv;
    return make_op(std::move(out), {a, s}, [a, s](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
        if (s->requires_grad) {
            double acc = 0.0;
            for (double x : n.grad.v) acc += x;
            s->ensure_grad().v[0] -= acc;
        }
    });
}

Var mul_mask(const Var& a, const Tensor& m) {
    check(a->val.same_shape(m), "mul_mask: shape mismatch");
    Tensor out = a->val;
    for (long long i = 0; i < out.numel(); ++i) out.v[(size_t)i] *= m.v[(size_t)i];
    Tensor mc = m;
    return make_op(std::move(out), {a}, [a, mc](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i)
            g.v[(size_t)i] += n.grad.v[(size_t)i] * mc.v[(size_t)i];
    });
}

Var masked_mean(const Var& a, const Tensor& m) {
    check(a->val.same_shape(m), "masked_mean: shape mismatch");
    double cnt = m.sum();
    check(cnt > 0, "masked_mean: empty mask");
    double s = 0.0;
    for (long long i = 0; i < m.numel(); ++i) s += a->val.v[(size_t)i] * m.v[(size_t)i];
    Tensor mc = m;
    return make_op(Tensor::scalar(s / cnt), {a}, [a, mc, cnt](Node& n) {
        auto& g = a->ensure_grad();
        const double go = n.grad.v[0] / cnt;
        for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += go * mc.v[(size_t)i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    check(a->val.rank() == 2 && b->val.rank() == 2 && a->val.dim(1) == b->val.dim(0),
          "matmul: shape mismatch");
    const int M = a->val.dim(0), K = a->val.dim(1), N = b->val.dim(1);
    Tensor out({M, N});
    kern::matmul(out.data(), a->val.data(), b->val.data(), M, K, N, false);
    return make_op(std::move(out), {a, b}, [a, b, M, K, N](Node& n) {
        if (a->requires_grad)
            kern::matmul_abt(a->ensure_grad().data(), n.grad.data(), b->val.data(), M, N, K, true);
        if (b->requires_grad)
            kern::matmul_atb(b->ensure_grad().data(), a->val.data(), n.grad.data(), M, K, N, true);
    });
}

Var matmul_abt(const Var& a, const Var& b) {
    check(a->val.rank() == 2 && b->val.rank() == 2 && a->val.dim(1) == b->val.dim(1),
          "matmul_abt: shape mismatch");
    const int M = a->val.dim(0), K = a->val.dim(1), N = b->val.dim(0);
    Tensor out({M, N});
    kern::matmul_abt(out.data(), a->val.data(), b->val.data(), M, K, N, false);
    return make_op(std::move(out), {a, b}, [a, b, M, K, N](Node& n) {
        // C = A B^T: gA += gC B ; gB += gC^T A
        if (a->requires_grad)
            kern::matmul(a->ensure_grad().data(), n.grad.data(), b->val.data(), M, N, K, true);
        if (b->requires_grad)
            kern::matmul_atb(b->ensure_grad().data(), n.grad.data(), a->val.data(), M, N, K, true);
    });
}

Var add_rowvec(const Var& x, const Var& b) {
    check(x->val.rank() == 2 && b->val.rank() == 1 && x->val.dim(1) == b->val.dim(0),
          "add_rowvec: shape mismatch");
    const int M = x->val.dim(0), N = x->val.dim(1);
    Tensor out = x->val;
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) out.v[(size_t)m * N + n] += b->val.v[(size_t)n];
    return make_op(std::move(out), {x, b}, [x, b, M, N](Node& n) {
        if (x->requires_grad) {
            auto& g = x->ensure_grad();
            for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (int m = 0; m < M; ++m)
                for (int j = 0; j < N; ++j) g.v[(size_t)j] += n.grad.v[(size_t)m * N + j];
        }
    });
}

Var softmax_rows(const Var& x) {
    check(x->val.rank() == 2, "softmax_rows: rank 2 expected");
    const int M = x->val.dim(0), N = x->val.dim(1);
    Tensor out({M, N});
    kern::softmax_rows(out.data(), x->val.data(), M, N);
    Tensor yv = out;
    return make_op(std::move(out), {x}, [x, yv, M, N](Node& n) {
        auto& g = x->ensure_grad();
        for (int m = 0; m < M; ++m) {
            const double* y = yv.data() + (size_t)m * N;
            const double* go = n.grad.data() + (size_t)m * N;
            double dot = 0.0;
            for (int j = 0; j < N; ++j) dot += go[j] * y[j];
            double* gx = g.data() + (size_t)m * N;
            for (int j = 0; j < N; ++j) gx[j] += y[j] * (go[j] - dot);
        }
    });
}

Var slice_cols(const Var& x, int c0, int c1) {
    check(x->val.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= x->val.dim(1), "slice_cols: range");
    const int M = x->val.dim(0), N = x->val.dim(1), C = c1 - c0;
    Tensor out({M, C});
    for (int m = 0; m < M; ++m)
        for (int c = 0; c < C; ++c) out(m, c) = x->val(m, c0 + c);
    return make_op(std::move(out), {x}, [x, c0, C, M, N](Node& n) {
        auto& g = x->ensure_grad();
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < C; ++c) g.v[(size_t)m * N + c0 + c] += n.grad.v[(size_t)m * C + c];
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols: empty");
    const int M = xs[0]->val.dim(0);
    int N = 0;
    for (const auto& x : xs) {
        check(x->val.rank() == 2 && x->val.dim(0) == M, "concat_cols: shape mismatch");
        N += x->val.dim(1);
    }
    Tensor out({M, N});
    int off = 0;
    for (const auto& x : xs) {
        const int C = x->val.dim(1);
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < C; ++c) out(m, off + c) = x->val(m, c);
        off += C;
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    return make_op(std::move(out), parents, [xs, M, N](Node& n) {
        int off = 0;
        for (const auto& x : xs) {
            const int C = x->val.dim(1);
            if (x->requires_grad) {
                auto& g = x->ensure_grad();
                for (int m = 0; m < M; ++m)
                    for (int c = 0; c < C; ++c)
                        g.v[(size_t)m * C + c] += n.grad.v[(size_t)m * N + off + c];
            }
            off += C;
        }
    });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int> shape) {
    check(Tensor::count(shape) == a->val.numel(), "reshape: element count mismatch");
    Tensor out = a->val.reshaped(shape);
    return make_op(std::move(out), {a}, [a](Node& n) {
        auto& g = a->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) g.v[(size_t)i] += n.grad.v[(size_t)i];
    });
}

Var chw_to_mc(const Var& x) {
    check(x->val.rank() == 3, "chw_to_mc: rank 3 expected");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2), M = H * W;
    Tensor out({M, C});
    for (int c = 0; c < C; ++c)
        for (int m = 0; m < M; ++m) out.v[(size_t)m * C + c] = x->val.v[(size_t)c * M + m];
    return make_op(std::move(out), {x}, [x, C, M](Node& n) {
        auto& g = x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int m = 0; m < M; ++m) g.v[(size_t)c * M + m] += n.grad.v[(size_t)m * C + c];
    });
}

Var mc_to_chw(const Var& x, int H, int W) {
    check(x->val.rank() == 2 && x->val.dim(0) == H * W, "mc_to_chw: shape mismatch");
    const int M = H * W, C = x->val.dim(1);
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int m = 0; m < M; ++m) out.v[(size_t)c * M + m] = x->val.v[(size_t)m * C + c];
    return make_op(std::move(out), {x}, [x, C, M](Node& n) {
        auto& g = x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int m = 0; m < M; ++m) g.v[(size_t)m * C + c] += n.grad.v[(size_t)c * M + m];
    });
}

// ---------------------------------------------------------------------------
// conv / image
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(x->val.rank() == 3 && w->val.rank() == 4 && x->val.dim(0) == w->val.dim(1),
          "conv2d: shape mismatch");
    const int Ci = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    const int Co = w->val.dim(0), k = w->val.dim(2);
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    Tensor out({Co, OH, OW});
    kern::conv2d_fwd(out.data(), x->val.data(), w->val.data(), b ? b->val.data() : nullptr, Ci, H,
                     W, Co, k, stride, pad);
    std::vector<Var> parents = {x, w};
    if (b) parents.push_back(b);
    return make_op(std::move(out), parents, [x, w, b, Ci, H, W, Co, k, stride, pad](Node& n) {
        if (x->requires_grad)
            kern::conv2d_bwd_x(x->ensure_grad().data(), n.grad.data(), w->val.data(), Ci, H, W, Co,
                               k, stride, pad);
        if (w->requires_grad || (b && b->requires_grad)) {
            Tensor gb_tmp({Co});
            double* gb = (b && b->requires_grad) ? b->ensure_grad().data() : gb_tmp.data();
            Tensor gw_tmp;
            double* gw;
            if (w->requires_grad) {
                gw = w->ensure_grad().data();
            } else {
                gw_tmp = Tensor::zeros(w->val.shape);
                gw = gw_tmp.data();
            }
            kern::conv2d_bwd_w(gw, gb, n.grad.data(), x->val.data(), Ci, H, W, Co, k, stride, pad);
        }
    });
}

Var upsample_nearest2(const Var& x) {
    check(x->val.rank() == 3, "upsample_nearest2: rank 3 expected");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor out({C, H * 2, W * 2});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w)
                out(c, h, w) = x->val(c, h / 2, w / 2);
    return make_op(std::move(out), {x}, [x, C, H, W](Node& n) {
        auto& g = x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double s = 0.0;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw)
                            s += n.grad(c, 2 * h + dh, 2 * w + dw);
                    g(c, h, w) += s;
                }
    });
}

Var resize_bicubic(const Var& x, int OH, int OW) {
    check(x->val.rank() == 3, "resize_bicubic: rank 3 expected");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor out({C, OH, OW});
    kern::resize_bicubic(out.data(), x->val.data(), C, H, W, OH, OW);
    return make_op(std::move(out), {x}, [x, C, H, W, OH, OW](Node& n) {
        kern::resize_bicubic_bwd(x->ensure_grad().data(), n.grad.data(), C, H, W, OH, OW);
    });
}

Var avgpool3_reflect(const Var& x) {
    check(x->val.rank() == 3, "avgpool3_reflect: rank 3 expected");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor out({C, H, W});
    kern::boxmean3_reflect(out.data(), x->val.data(), C, H, W);
    return make_op(std::move(out), {x}, [x, C, H, W](Node& n) {
        auto& g = x->ensure_grad();
        auto reflect = [](int i, int nn) {
            if (i < 0) i = -i;
            if (i >= nn) i = 2 * nn - 2 - i;
            return i;
        };
        for (int c = 0; c < C; ++c) {
            double* gc = g.data() + (size_t)c * H * W;
            const double* go = n.grad.data() + (size_t)c * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const double v = go[(size_t)h * W + w] / 9.0;
                    if (v == 0.0) continue;
                    for (int dh = -1; dh <= 1; ++dh) {
                        const int hh = reflect(h + dh, H);
                        for (int dw = -1; dw <= 1; ++dw)
                            gc[(size_t)hh * W + reflect(w + dw, W)] += v;
                    }
                }
        }
    });
}

Var concat_ch(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_ch: empty");
    const int H = xs[0]->val.dim(1), W = xs[0]->val.dim(2);
    int C = 0;
    for (const auto& x : xs) {
        check(x->val.rank() == 3 && x->val.dim(1) == H && x->val.dim(2) == W,
              "concat_ch: shape mismatch");
        C += x->val.dim(0);
    }
    Tensor out({C, H, W});
    size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->val.v.begin(), x->val.v.end(), out.v.begin() + (long)off);
        off += x->val.v.size();
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    return make_op(std::move(out), parents, [xs](Node& n) {
        size_t off = 0;
        for (const auto& x : xs) {
            if (x->requires_grad) {
                auto& g = x->ensure_grad();
                for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += n.grad.v[off + i];
            }
            off += x->val.v.size();
        }
    });
}

Var global_avg_pool(const Var& x) {
    check(x->val.rank() == 3, "global_avg_pool: rank 3 expected");
    const int C = x->val.dim(0), M = x->val.dim(1) * x->val.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int m = 0; m < M; ++m) s += x->val.v[(size_t)c * M + m];
        out(c) = s / M;
    }
    return make_op(std::move(out), {x}, [x, C, M](Node& n) {
        auto& g = x->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const double go = n.grad.v[(size_t)c] / M;
            for (int m = 0; m < M; ++m) g.v[(size_t)c * M + m] += go;
        }
    });
}

Var dx_fwd(const Var& x) {
    check(x->val.rank() == 2, "dx_fwd: rank 2 expected");
    const int H = x->val.dim(0), W = x->val.dim(1);
    Tensor out({H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W - 1; ++w) out(h, w) = x->val(h, w + 1) - x->val(h, w);
    return make_op(std::move(out), {x}, [x, H, W](Node& n) {
        auto& g = x->ensure_grad();
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W - 1; ++w) {
                const double go = n.grad(h, w);
                g(h, w + 1) += go;
                g(h, w) -= go;
            }
    });
}

Var dy_fwd(const Var& x) {
    check(x->val.rank() == 2, "dy_fwd: rank 2 expected");
    const int H = x->val.dim(0), W = x->val.dim(1);
    Tensor out({H, W});
    for (int h = 0; h < H - 1; ++h)
        for (int w = 0; w < W; ++w) out(h, w) = x->val(h + 1, w) - x->val(h, w);
    return make_op(std::move(out), {x}, [x, H, W](Node& n) {
        auto& g = x->ensure_grad();
        for (int h = 0; h < H - 1; ++h)
            for (int w = 0; w < W; ++w) {
                const double go = n.grad(h, w);
                g(h + 1, w) += go;
                g(h, w) -= go;
            }
    });
}

Var grid_sample(const Tensor& src, const Var& grid) {
    check(src.rank() == 3 && grid->val.rank() == 3 && grid->val.dim(2) == 2,
          "grid_sample: shapes");
    const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
    const int OH = grid->val.dim(0), OW = grid->val.dim(1);
    Tensor out({C, OH, OW});
    kern::bilinear_sample(out.data(), src.data(), C, H, W, grid->val.data(), OH, OW);
    Tensor srcc = src;
    return make_op(std::move(out), {grid}, [srcc, grid, C, H, W, OH, OW](Node& n) {
        auto& g = grid->ensure_grad();
        const double* gr = grid->val.data();
        for (int o = 0; o < OH * OW; ++o) {
            const double xr = gr[(size_t)o * 2 + 0], yr = gr[(size_t)o * 2 + 1];
            // Border clamp: zero derivative once the coordinate is clamped.
            const bool in_x = xr > 0.0 && xr < (double)(W - 1);
            const bool in_y = yr > 0.0 && yr < (double)(H - 1);
            const double x = std::clamp(xr, 0.0, (double)(W - 1));
            const double y = std::clamp(yr, 0.0, (double)(H - 1));
            const int x0 = std::min((int)x, std::max(W - 2, 0));
            const int y0 = std::min((int)y, std::max(H - 2, 0));
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double fx = x - x0, fy = y - y0;
            double gx = 0.0, gy = 0.0;
            for (int c = 0; c < C; ++c) {
                const double go = n.grad.v[(size_t)c * OH * OW + o];
                if (go == 0.0) continue;
                const double* s = srcc.data() + (size_t)c * H * W;
                const double s00 = s[(size_t)y0 * W + x0], s01 = s[(size_t)y0 * W + x1];
                const double s10 = s[(size_t)y1 * W + x0], s11 = s[(size_t)y1 * W + x1];
                gx += go * ((1 - fy) * (s01 - s00) + fy * (s11 - s10));
                gy += go * ((1 - fx) * (s10 - s00) + fx * (s11 - s01));
            }
            if (in_x) g.v[(size_t)o * 2 + 0] += gx;
            if (in_y) g.v[(size_t)o * 2 + 1] += gy;
        }
    });
}

}  // namespace rpr::ag
