#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <vector>

#include "riginv/error.hpp"
#include "riginv/rng.hpp"

namespace riginv {

// Dense row-major tensor. Rank is 1 or 2 everywhere in this project; images
// enter the graph already flattened to patch rows.
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(count(shape), T(0));
    }
    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == count(shape), "Tensor: shape/data mismatch");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (T v : data) out.data.push_back(static_cast<U>(v));
        return out;
    }
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated when requires_grad
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;  // reads this->grad, accumulates into parents
};

// Handle into the tape. Ops build the graph eagerly; backward() runs one
// reverse-topological sweep from a scalar.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> value, bool requires_grad) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->leaf = true;
        if (requires_grad) n->grad = Tensor<T>(n->value.shape);
        return Var(std::move(n));
    }
    static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::shared_ptr<Node<T>> node() const { return node_; }
    bool valid() const { return node_ != nullptr; }

    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        if (rg && node_->grad.size() != node_->value.size())
            node_->grad = Tensor<T>(node_->value.shape);
    }
    void zero_grad() {
        if (node_->requires_grad) node_->grad.fill(T(0));
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace ad {

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var<T>(std::move(n));
}

template <class T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() != parent.value.size()) parent.grad = Tensor<T>(parent.value.shape);
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad.data[i] += g.data[i];
}

// --- elementwise ---

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require(a.value().shape == b.value().shape, "add: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
    return make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        accumulate(*n.parents[0], n.grad);
        accumulate(*n.parents[1], n.grad);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require(a.value().shape == b.value().shape, "sub: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
    return make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        accumulate(*n.parents[0], n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor<T> neg = n.grad;
            for (auto& v : neg.data) v = -v;
            accumulate(*n.parents[1], neg);
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require(a.value().shape == b.value().shape, "mul: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
    return make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
        if (n.parents[0]->requires_grad) {
            Tensor<T> g = n.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= n.parents[1]->value.data[i];
            accumulate(*n.parents[0], g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor<T> g = n.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= n.parents[0]->value.data[i];
            accumulate(*n.parents[1], g);
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= s;
    return make_op<T>(std::move(out), {a.node()}, [s](Node<T>& n) {
        Tensor<T> g = n.grad;
        for (auto& v : g.data) v *= s;
        accumulate(*n.parents[0], g);
    });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.data) {
        const double xv = static_cast<double>(v);
        v = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv / std::numbers::sqrt2)));
    }
    return make_op<T>(std::move(out), {x.node()}, [](Node<T>& n) {
        Tensor<T> g = n.grad;
        const Tensor<T>& xv = n.parents[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = static_cast<double>(xv.data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            g.data[i] *= static_cast<T>(cdf + x * pdf);
        }
        accumulate(*n.parents[0], g);
    });
}

// --- linear algebra ---

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require(a.value().shape.size() == 2 && b.value().shape.size() == 2, "matmul: rank != 2");
    const std::size_t m = a.value().shape[0], k = a.value().shape[1];
    require(b.value().shape[0] == k, "matmul: inner dim mismatch");
    const std::size_t n = b.value().shape[1];
    Tensor<T> out({m, n});
    const T* A = a.value().data.data();
    const T* B = b.value().data.data();
    T* C = out.data.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = A[i * k + kk];
            if (av == T(0)) continue;
            const T* brow = B + kk * n;
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    return make_op<T>(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& nd) {
        const T* G = nd.grad.data.data();
        if (nd.parents[0]->requires_grad) {  // dA = G B^T
            const T* B = nd.parents[1]->value.data.data();
            Tensor<T> da({m, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    T s = 0;
                    const T* grow = G + i * n;
                    const T* brow = B + kk * n;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    da.data[i * k + kk] = s;
                }
            accumulate(*nd.parents[0], da);
        }
        if (nd.parents[1]->requires_grad) {  // dB = A^T G
            const T* A = nd.parents[0]->value.data.data();
            Tensor<T> db({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = A[i * k + kk];
                    if (av == T(0)) continue;
                    const T* grow = G + i * n;
                    T* drow = db.data.data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            accumulate(*nd.parents[1], db);
        }
    });
}

// A [m,k] x B^T where B is [n,k].
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    require(a.value().shape.size() == 2 && b.value().shape.size() == 2, "matmul_nt: rank != 2");
    const std::size_t m = a.value().shape[0], k = a.value().shape[1];
    require(b.value().shape[1] == k, "matmul_nt: inner dim mismatch");
    const std::size_t n = b.value().shape[0];
    Tensor<T> out({m, n});
    const T* A = a.value().data.data();
    const T* B = b.value().data.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            const T* arow = A + i * k;
            const T* brow = B + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            out.data[i * n + j] = s;
        }
    return make_op<T>(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& nd) {
        const T* G = nd.grad.data.data();
        if (nd.parents[0]->requires_grad) {  // dA = G B
            const T* B = nd.parents[1]->value.data.data();
            Tensor<T> da({m, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = G[i * n + j];
                    if (gv == T(0)) continue;
                    const T* brow = B + j * k;
                    T* drow = da.data.data() + i * k;
                    for (std::size_t kk = 0; kk < k; ++kk) drow[kk] += gv * brow[kk];
                }
            accumulate(*nd.parents[0], da);
        }
        if (nd.parents[1]->requires_grad) {  // dB = G^T A
            const T* A = nd.parents[0]->value.data.data();
            Tensor<T> db({n, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = G[i * n + j];
                    if (gv == T(0)) continue;
                    const T* arow = A + i * k;
                    T* drow = db.data.data() + j * k;
                    for (std::size_t kk = 0; kk < k; ++kk) drow[kk] += gv * arow[kk];
                }
            accumulate(*nd.parents[1], db);
        }
    });
}

// X [m,n] + row vector b [n].
template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    const std::size_t m = x.value().rows(), n = x.value().cols();
    require(b.value().size() == n, "add_rowvec: width mismatch");
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b.value().data[j];
    return make_op<T>(std::move(out), {x.node(), b.node()}, [m, n](Node<T>& nd) {
        accumulate(*nd.parents[0], nd.grad);
        if (nd.parents[1]->requires_grad) {
            Tensor<T> db(nd.parents[1]->value.shape);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db.data[j] += nd.grad.data[i * n + j];
            accumulate(*nd.parents[1], db);
        }
    });
}

// --- rowwise nonlinear ---

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    const std::size_t m = x.value().rows(), n = x.value().cols();
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < m; ++i) {
        T* row = out.data.data() + i * n;
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return make_op<T>(std::move(out), {x.node()}, [m, n](Node<T>& nd) {
        Tensor<T> dx({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const T* y = nd.value.data.data() + i * n;
            const T* g = nd.grad.data.data() + i * n;
            T dotv = 0;
            for (std::size_t j = 0; j < n; ++j) dotv += y[j] * g[j];
            T* d = dx.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) d[j] = y[j] * (g[j] - dotv);
        }
        accumulate(*nd.parents[0], dx);
    });
}

template <class T>
Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const std::size_t m = x.value().rows(), n = x.value().cols();
    require(gamma.value().size() == n && beta.value().size() == n, "layernorm: param width mismatch");
    Tensor<T> out({m, n});
    // xhat is recomputed in backward from the cached inverse sigma.
    auto inv_sigma = std::make_shared<std::vector<T>>(m);
    auto means = std::make_shared<std::vector<T>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.value().data.data() + i * n;
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<T>(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + eps);
        (*means)[i] = mu;
        (*inv_sigma)[i] = is;
        for (std::size_t j = 0; j < n; ++j)
            out.data[i * n + j] = (row[j] - mu) * is * gamma.value().data[j] + beta.value().data[j];
    }
    return make_op<T>(std::move(out), {x.node(), gamma.node(), beta.node()},
                      [m, n, inv_sigma, means](Node<T>& nd) {
        const Tensor<T>& xv = nd.parents[0]->value;
        const Tensor<T>& gv = nd.parents[1]->value;
        Tensor<T> dx({m, n});
        Tensor<T> dgamma(nd.parents[1]->value.shape);
        Tensor<T> dbeta(nd.parents[2]->value.shape);
        for (std::size_t i = 0; i < m; ++i) {
            const T is = (*inv_sigma)[i];
            const T mu = (*means)[i];
            const T* xrow = xv.data.data() + i * n;
            const T* grow = nd.grad.data.data() + i * n;
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const T xhat = (xrow[j] - mu) * is;
                const T dxhat = grow[j] * gv.data[j];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
                dgamma.data[j] += grow[j] * xhat;
                dbeta.data[j] += grow[j];
            }
            mean_dxhat /= static_cast<T>(n);
            mean_dxhat_xhat /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
                const T xhat = (xrow[j] - mu) * is;
                const T dxhat = grow[j] * gv.data[j];
                dx.data[i * n + j] = is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
        }
        accumulate(*nd.parents[0], dx);
        accumulate(*nd.parents[1], dgamma);
        accumulate(*nd.parents[2], dbeta);
    });
}

// --- reductions / rearrangement ---

template <class T>
Var<T> mean_all(const Var<T>& x) {
    const std::size_t sz = x.value().size();
    T s = 0;
    for (T v : x.value().data) s += v;
    Tensor<T> out({1});
    out.data[0] = s / static_cast<T>(sz);
    return make_op<T>(std::move(out), {x.node()}, [sz](Node<T>& nd) {
        const T g = nd.grad.data[0] / static_cast<T>(sz);
        Tensor<T> dx(nd.parents[0]->value.shape);
        dx.fill(g);
        accumulate(*nd.parents[0], dx);
    });
}

// Mean over rows -> [1, n] (global average pool over tokens).
template <class T>
Var<T> mean_rows(const Var<T>& x) {
    const std::size_t m = x.value().rows(), n = x.value().cols();
    Tensor<T> out({std::size_t(1), n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j] += x.value().data[i * n + j];
    for (auto& v : out.data) v /= static_cast<T>(m);
    return make_op<T>(std::move(out), {x.node()}, [m, n](Node<T>& nd) {
        Tensor<T> dx({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dx.data[i * n + j] = nd.grad.data[j] / static_cast<T>(m);
        accumulate(*nd.parents[0], dx);
    });
}

template <class T>
Var<T> col_slice(const Var<T>& x, std::size_t c0, std::size_t c1) {
    const std::size_t m = x.value().rows(), n = x.value().cols();
    require(c0 < c1 && c1 <= n, "col_slice: bad range");
    const std::size_t w = c1 - c0;
    Tensor<T> out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = x.value().data[i * n + c0 + j];
    return make_op<T>(std::move(out), {x.node()}, [m, n, c0, w](Node<T>& nd) {
        Tensor<T> dx({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                dx.data[i * n + c0 + j] = nd.grad.data[i * w + j];
        accumulate(*nd.parents[0], dx);
    });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
    require(!xs.empty(), "concat_cols: empty input");
    const std::size_t m = xs[0].value().rows();
    std::size_t total = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::vector<std::size_t> widths;
    for (const auto& x : xs) {
        require(x.value().rows() == m, "concat_cols: row mismatch");
        widths.push_back(x.value().cols());
        total += x.value().cols();
        parents.push_back(x.node());
    }
    Tensor<T> out({m, total});
    std::size_t off = 0;
    for (std::size_t p = 0; p < xs.size(); ++p) {
        const std::size_t w = widths[p];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out.data[i * total + off + j] = xs[p].value().data[i * w + j];
        off += w;
    }
    return make_op<T>(std::move(out), std::move(parents), [m, total, widths](Node<T>& nd) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < nd.parents.size(); ++p) {
            const std::size_t w = widths[p];
            if (nd.parents[p]->requires_grad) {
                Tensor<T> dx({m, w});
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        dx.data[i * w + j] = nd.grad.data[i * total + off + j];
                accumulate(*nd.parents[p], dx);
            }
            off += w;
        }
    });
}

// out.data[i] = x.data[index_map[i]]; backward is scatter-add. Covers the
// constant rearrangements (patchification).
template <class T>
Var<T> gather(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> index_map,
              std::vector<std::size_t> out_shape) {
    Tensor<T> out(std::move(out_shape));
    require(out.size() == index_map->size(), "gather: index map size mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.value().data[(*index_map)[i]];
    return make_op<T>(std::move(out), {x.node()}, [index_map](Node<T>& nd) {
        Tensor<T> dx(nd.parents[0]->value.shape);
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            dx.data[(*index_map)[i]] += nd.grad.data[i];
        accumulate(*nd.parents[0], dx);
    });
}

// 2x2 max-pool over an h x w token grid stored as [h*w, d] rows.
// Ties break toward the first cell in scan order.
template <class T>
Var<T> pool_max_2x2(const Var<T>& x, std::size_t h, std::size_t w) {
    const std::size_t d = x.value().cols();
    require(x.value().rows() == h * w, "pool_max_2x2: grid size mismatch");
    require(h % 2 == 0 && w % 2 == 0, "pool_max_2x2: grid not divisible by 2");
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> out({oh * ow, d});
    auto argmax = std::make_shared<std::vector<std::size_t>>(oh * ow * d);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t o = oy * ow + ox;
            for (std::size_t c = 0; c < d; ++c) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t in = (2 * oy + dy) * w + (2 * ox + dx);
                        const T v = x.value().data[in * d + c];
                        if (v > best) {
                            best = v;
                            best_idx = in * d + c;
                        }
                    }
                out.data[o * d + c] = best;
                (*argmax)[o * d + c] = best_idx;
            }
        }
    return make_op<T>(std::move(out), {x.node()}, [argmax](Node<T>& nd) {
        Tensor<T> dx(nd.parents[0]->value.shape);
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            dx.data[(*argmax)[i]] += nd.grad.data[i];
        accumulate(*nd.parents[0], dx);
    });
}

// --- fused losses ---

// mean((x - t)^2) against a constant target.
template <class T>
Var<T> mse_to(const Var<T>& x, Tensor<T> target) {
    require(x.value().shape == target.shape, "mse_to: shape mismatch");
    const std::size_t sz = x.value().size();
    T s = 0;
    for (std::size_t i = 0; i < sz; ++i) {
        const T d = x.value().data[i] - target.data[i];
        s += d * d;
    }
    Tensor<T> out({1});
    out.data[0] = s / static_cast<T>(sz);
    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    return make_op<T>(std::move(out), {x.node()}, [sz, tgt](Node<T>& nd) {
        const T g = nd.grad.data[0] * T(2) / static_cast<T>(sz);
        Tensor<T> dx(nd.parents[0]->value.shape);
        for (std::size_t i = 0; i < sz; ++i)
            dx.data[i] = g * (nd.parents[0]->value.data[i] - tgt->data[i]);
        accumulate(*nd.parents[0], dx);
    });
}

// mean(|x - t|); subgradient at zero is 0.
template <class T>
Var<T> l1_to(const Var<T>& x, Tensor<T> target) {
    require(x.value().shape == target.shape, "l1_to: shape mismatch");
    const std::size_t sz = x.value().size();
    T s = 0;
    for (std::size_t i = 0; i < sz; ++i) s += std::abs(x.value().data[i] - target.data[i]);
    Tensor<T> out({1});
    out.data[0] = s / static_cast<T>(sz);
    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    return make_op<T>(std::move(out), {x.node()}, [sz, tgt](Node<T>& nd) {
        const T g = nd.grad.data[0] / static_cast<T>(sz);
        Tensor<T> dx(nd.parents[0]->value.shape);
        for (std::size_t i = 0; i < sz; ++i) {
            const T d = nd.parents[0]->value.data[i] - tgt->data[i];
            dx.data[i] = d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
        accumulate(*nd.parents[0], dx);
    });
}

}  // namespace ad

// Reverse-topological sweep from a scalar loss. Leaf grads accumulate across
// calls; interior grads are fresh per call.
template <class T>
void backward(const Var<T>& loss) {
    require(loss.valid() && loss.value().size() == 1, "backward: loss must be scalar");
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<const Node<T>*> visited;
    // Iterative post-order DFS; graphs are deep enough that recursion is unsafe.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node<T>* p = node->parents[child].get();
            ++child;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (n->leaf) {
            if (n->grad.size() != n->value.size()) n->grad = Tensor<T>(n->value.shape);
        } else {
            n->grad = Tensor<T>(n->value.shape);
        }
    }
    loss.node()->grad.data[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// Truncated normal (resample beyond 2 std), the usual transformer init.
template <class T>
Tensor<T> trunc_normal_init(std::vector<std::size_t> shape, double std, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) {
        double z;
        do {
            z = rng.normal(0.0, 1.0);
        } while (std::abs(z) > 2.0);
        v = static_cast<T>(z * std);
    }
    return t;
}

}  // namespace riginv
