#include "cyclevol/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "cyclevol/errors.hpp"

namespace cyclevol::ag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void require_rank3(const Var& x, const char* op) {
    if (!x.defined() || x.value().rank() != 3)
        throw ShapeError(std::string(op) + ": expected a (C,H,W) tensor");
}

// (Cin,H,W) -> (Cin*k*k, Hout*Wout)
void im2col(const Tensor& x, int k, int stride, int pad, int hout, int wout, double* col) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t n = static_cast<std::size_t>(hout) * wout;
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* out = row + static_cast<std::size_t>(oy) * wout;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + wout, 0.0);
                        continue;
                    }
                    const double* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        out[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im_add(const double* col, int k, int stride, int pad, int hout, int wout, Tensor& dx) {
    const int cin = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
    const std::size_t n = static_cast<std::size_t>(hout) * wout;
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = dx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    const double* in = row + static_cast<std::size_t>(oy) * wout;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += in[ox];
                    }
                }
            }
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

Var Var::leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const auto& p : parents)
        if (p.requires_grad()) node->requires_grad = true;
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

void backward(const Var& root, double seed) {
    if (!root.defined() || root.value().size() != 1)
        throw ShapeError("backward: root must be a single-element tensor");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
    }
}

Var detach(const Var& x) { return Var::constant(x.value()); }

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require_rank3(x, "conv2d");
    const Tensor& w = weight.value();
    if (w.rank() != 4 || w.dim(1) != x.value().dim(0) || w.dim(2) != w.dim(3))
        throw ShapeError("conv2d: weight " + w.shape_string() + " incompatible with input " +
                         x.value().shape_string());
    const int cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
    const int h = x.value().dim(1), wd = x.value().dim(2);
    const int hout = (h + 2 * pad - k) / stride + 1;
    const int wout = (wd + 2 * pad - k) / stride + 1;
    if (hout <= 0 || wout <= 0) throw ShapeError("conv2d: input too small");
    const int rows = cin * k * k;
    const int n = hout * wout;

    auto col = std::make_shared<AlignedBuffer>(static_cast<std::size_t>(rows) * n);
    im2col(x.value(), k, stride, pad, hout, wout, col->data());

    Tensor out({cout, hout, wout});
    MapMatrix y(out.data(), cout, n);
    ConstMapMatrix wm(w.data(), cout, rows);
    ConstMapMatrix cm(col->data(), rows, n);
    y.noalias() = wm * cm;
    if (bias.defined()) {
        if (bias.value().size() != static_cast<std::size_t>(cout)) throw ShapeError("conv2d: bias size");
        for (int o = 0; o < cout; ++o) y.row(o).array() += bias.value()[o];
    }

    std::vector<Var> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents),
                       [col, k, stride, pad, hout, wout, cout, rows, n](Node& self) {
                           ConstMapMatrix dy(self.grad.data(), cout, n);
                           Node& xn = *self.parents[0];
                           Node& wn = *self.parents[1];
                           if (wn.requires_grad) {
                               MapMatrix dw(wn.grad_buffer().data(), cout, rows);
                               dw.noalias() += dy * ConstMapMatrix(col->data(), rows, n).transpose();
                           }
                           if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                               Tensor& db = self.parents[2]->grad_buffer();
                               for (int o = 0; o < cout; ++o) db[o] += dy.row(o).sum();
                           }
                           if (xn.requires_grad) {
                               RowMatrix dcol = ConstMapMatrix(wn.value.data(), cout, rows).transpose() * dy;
                               col2im_add(dcol.data(), k, stride, pad, hout, wout, xn.grad_buffer());
                           }
                       });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        Tensor& dx = xn.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xn.value[i] > 0.0) dx[i] += self.grad[i];
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    int channels = 0;
    for (const auto& p : parts) {
        require_rank3(p, "concat_channels");
        if (p.value().dim(1) != parts[0].value().dim(1) || p.value().dim(2) != parts[0].value().dim(2))
            throw ShapeError("concat_channels: spatial dims differ: " + p.value().shape_string() + " vs " +
                             parts[0].value().shape_string());
        channels += p.value().dim(0);
    }
    Tensor out({channels, parts[0].value().dim(1), parts[0].value().dim(2)});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
        offset += p.value().size();
    }
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
        std::size_t off = 0;
        for (auto& parent : self.parents) {
            const std::size_t len = parent->value.size();
            if (parent->requires_grad) {
                Tensor& g = parent->grad_buffer();
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            }
            off += len;
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank3(x, "upsample_nearest2x");
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x.value().at(ch, y / 2, xx / 2);
    return make_result(std::move(out), {x}, [c, h, w](Node& self) {
        Tensor& dx = self.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) dx.at(ch, y / 2, xx / 2) += self.grad.at(ch, y, xx);
    });
}

Var softmax_foreground(const Var& logits) {
    require_rank3(logits, "softmax_foreground");
    if (logits.value().dim(0) != 2) throw ShapeError("softmax_foreground: expected 2 logit channels");
    const int h = logits.value().dim(1), w = logits.value().dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({1, h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        const double d = logits.value()[plane + i] - logits.value()[i];
        out[i] = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    }
    return make_result(std::move(out), {logits}, [plane](Node& self) {
        Tensor& dl = self.parents[0]->grad_buffer();
        const Tensor& p = self.value;
        for (std::size_t i = 0; i < plane; ++i) {
            const double g = self.grad[i] * p[i] * (1.0 - p[i]);
            dl[plane + i] += g;
            dl[i] -= g;
        }
    });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
    if (terms.size() != weights.size()) throw ShapeError("weighted_sum: terms/weights size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
        total += weights[i] * terms[i].value()[0];
    }
    std::vector<double> w(weights.begin(), weights.end());
    return make_result(Tensor({1}, {total}), std::vector<Var>(terms.begin(), terms.end()),
                       [w = std::move(w)](Node& self) {
                           for (std::size_t i = 0; i < self.parents.size(); ++i)
                               if (self.parents[i]->requires_grad)
                                   self.parents[i]->grad_buffer()[0] += w[i] * self.grad[0];
                       });
}

}  // namespace cyclevol::ag
