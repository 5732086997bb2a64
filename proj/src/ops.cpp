#include "cyclevae/ops.hpp"

#include <cmath>
#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "cyclevae/parallel.hpp"

namespace cyclevae {

namespace detail {

namespace {
std::string g_fault_op;
Real g_fault_factor = 1.0;
}  // namespace

void set_backward_fault(const std::string& op_name, Real factor) {
    g_fault_op = op_name;
    g_fault_factor = factor;
}

Real backward_fault_factor(const char* op_name) {
    if (g_fault_op.empty() || g_fault_op != op_name) return 1.0;
    return g_fault_factor;
}

int conv_out_extent(int in, int k, int stride, int padding) {
    const int span = in + 2 * padding - k;
    if (span < 0)
        throw ShapeError("conv: kernel " + std::to_string(k) + " exceeds padded extent " +
                         std::to_string(in + 2 * padding));
    return span / stride + 1;
}

void im2col(const Real* img, int c, int h, int w, int k, int stride, int padding,
            int oh, int ow, Real* cols) {
    const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci) {
        const Real* src = img + static_cast<std::size_t>(ci) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                Real* dst = cols + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * ohw;
                for (int oi = 0; oi < oh; ++oi) {
                    const int y = oi * stride - padding + ki;
                    if (y < 0 || y >= h) {
                        for (int oj = 0; oj < ow; ++oj) dst[oi * ow + oj] = 0.0;
                        continue;
                    }
                    for (int oj = 0; oj < ow; ++oj) {
                        const int x = oj * stride - padding + kj;
                        dst[oi * ow + oj] = (x >= 0 && x < w) ? src[y * w + x] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const Real* cols, int c, int h, int w, int k, int stride,
                int padding, int oh, int ow, Real* img) {
    const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci) {
        Real* dst = img + static_cast<std::size_t>(ci) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const Real* src = cols + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * ohw;
                for (int oi = 0; oi < oh; ++oi) {
                    const int y = oi * stride - padding + ki;
                    if (y < 0 || y >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int x = oj * stride - padding + kj;
                        if (x >= 0 && x < w) dst[y * w + x] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

void matmul_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    parallel_for(m, [&](std::int64_t i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const Real av = arow[t];
            const Real* brow = b + static_cast<std::size_t>(t) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    });
}

void matmul_bt_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    parallel_for(m, [&](std::int64_t i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + static_cast<std::size_t>(j) * k;
            Real s = 0.0;
            for (int t = 0; t < k; ++t) s += arow[t] * brow[t];
            crow[j] += s;
        }
    });
}

void matmul_at_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    parallel_for(m, [&](std::int64_t i) {
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
            const Real av = a[static_cast<std::size_t>(t) * m + i];
            const Real* brow = b + static_cast<std::size_t>(t) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    });
}

}  // namespace detail

namespace {

using detail::TensorNode;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& t, int rank) {
    if (t.ndim() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

/// Builds the output node: wires parents and wraps the backward rule with
/// the fault-injection hook. `backward` accumulates into parent grads and
/// must skip parents that do not require grad (their buffers stay empty).
Tensor make_op(const char* op, Shape shape, std::initializer_list<Tensor> inputs,
               std::function<void(TensorNode&)> backward) {
    bool rg = false;
    for (const Tensor& t : inputs)
        if (t.requires_grad()) rg = true;
    Tensor out = Tensor::zeros(std::move(shape), rg);
    TensorNode* node = out.node_ptr().get();
    node->op = op;
    if (rg) {
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
        node->backward_fn = [inner = std::move(backward)](TensorNode& n) {
            const Real f = detail::backward_fault_factor(n.op);
            if (f == 1.0) {
                inner(n);
                return;
            }
            // Fault mode: rescale exactly the contribution this op added.
            std::vector<std::vector<Real>> before;
            before.reserve(n.parents.size());
            for (const auto& p : n.parents) before.push_back(p->grad);
            inner(n);
            for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
                auto& g = n.parents[pi]->grad;
                const auto& base = before[pi];
                for (std::size_t j = 0; j < g.size(); ++j) {
                    const Real b = j < base.size() ? base[j] : 0.0;
                    g[j] = b + f * (g[j] - b);
                }
            }
        };
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = make_op("add", a.shape(), {a, b}, [](TensorNode& n) {
        for (int pi = 0; pi < 2; ++pi) {
            TensorNode& p = *n.parents[pi];
            if (!p.requires_grad) continue;
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = make_op("sub", a.shape(), {a, b}, [](TensorNode& n) {
        TensorNode& pa = *n.parents[0];
        TensorNode& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = make_op("mul", a.shape(), {a, b}, [](TensorNode& n) {
        TensorNode& pa = *n.parents[0];
        TensorNode& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.data[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.data[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    return out;
}

Tensor scale(const Tensor& a, Real factor) {
    Tensor out = make_op("scale", a.shape(), {a}, [factor](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += factor * n.grad[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = factor * ad[i];
    return out;
}

Tensor add_scalar(const Tensor& a, Real value) {
    Tensor out = make_op("add_scalar", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + value;
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = make_op("exp", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.data[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::exp(ad[i]);
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out = make_op("abs", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const Real x = p.data[i];
            const Real sign = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            p.grad[i] += n.grad[i] * sign;
        }
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::abs(ad[i]);
    return out;
}

Tensor square(const Tensor& a) {
    Tensor out = make_op("square", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * 2.0 * p.data[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * ad[i];
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_op("relu", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p.data[i] > 0.0) p.grad[i] += n.grad[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = make_op("sigmoid", a.shape(), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const Real s = n.data[i];
            p.grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        const Real x = ad[i];
        if (x >= 0.0) {
            od[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const Real e = std::exp(x);
            od[i] = e / (1.0 + e);
        }
    }
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op("sum", {1}, {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        const Real g = n.grad[0];
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
    Real s = 0.0;
    for (Real v : a.data()) s += v;
    out.mutable_data()[0] = s;
    return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    Tensor out = make_op("reshape", std::move(new_shape), {a}, [](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i];
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank("concat_cols", a, 2);
    require_rank("concat_cols", b, 2);
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out = make_op("concat_cols", {rows, ca + cb}, {a, b},
                         [rows, ca, cb](TensorNode& n) {
        TensorNode& pa = *n.parents[0];
        TensorNode& pb = *n.parents[1];
        const int cols = ca + cb;
        for (int r = 0; r < rows; ++r) {
            const Real* g = n.grad.data() + static_cast<std::size_t>(r) * cols;
            if (pa.requires_grad) {
                Real* ga = pa.grad.data() + static_cast<std::size_t>(r) * ca;
                for (int j = 0; j < ca; ++j) ga[j] += g[j];
            }
            if (pb.requires_grad) {
                Real* gb = pb.grad.data() + static_cast<std::size_t>(r) * cb;
                for (int j = 0; j < cb; ++j) gb[j] += g[ca + j];
            }
        }
    });
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < ca; ++j) od[r * (ca + cb) + j] = ad[r * ca + j];
        for (int j = 0; j < cb; ++j) od[r * (ca + cb) + ca + j] = bd[r * cb + j];
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank("linear", x, 2);
    require_rank("linear", weight, 2);
    require_rank("linear", bias, 1);
    if (x.dim(1) != weight.dim(1))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    if (bias.dim(0) != weight.dim(0))
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    const int rows = x.dim(0), in_f = x.dim(1), out_f = weight.dim(0);
    Tensor out = make_op("linear", {rows, out_f}, {x, weight, bias},
                         [rows, in_f, out_f](TensorNode& n) {
        TensorNode& px = *n.parents[0];
        TensorNode& pw = *n.parents[1];
        TensorNode& pb = *n.parents[2];
        if (px.requires_grad)
            detail::matmul_acc(n.grad.data(), pw.data.data(), px.grad.data(), rows, out_f, in_f);
        if (pw.requires_grad)
            detail::matmul_at_acc(n.grad.data(), px.data.data(), pw.grad.data(), out_f, rows, in_f);
        if (pb.requires_grad)
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < out_f; ++j)
                    pb.grad[j] += n.grad[static_cast<std::size_t>(r) * out_f + j];
    });
    auto od = out.mutable_data();
    detail::matmul_bt_acc(x.data().data(), weight.data().data(), od.data(), rows, in_f, out_f);
    auto bd = bias.data();
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < out_f; ++j) od[static_cast<std::size_t>(r) * out_f + j] += bd[j];
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", kernel, 4);
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (kernel.dim(2) != kernel.dim(3))
        throw ShapeError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != x.dim(1))
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match kernel " + shape_str(kernel.shape()));
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = kernel.dim(0), k = kernel.dim(2);
    const int oh = detail::conv_out_extent(h, k, stride, padding);
    const int ow = detail::conv_out_extent(w, k, stride, padding);
    const int csize = cin * k * k;
    const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
    const std::size_t in_item = static_cast<std::size_t>(cin) * h * w;
    const std::size_t out_item = static_cast<std::size_t>(cout) * ohw;

    Tensor out = make_op(
        "conv2d", {batch, cout, oh, ow}, {x, kernel},
        [batch, cin, h, w, cout, k, stride, padding, oh, ow, csize, ohw, in_item,
         out_item](TensorNode& n) {
            TensorNode& px = *n.parents[0];
            TensorNode& pk = *n.parents[1];
            const bool need_dx = px.requires_grad;
            const bool need_dk = pk.requires_grad;
            // Per-item kernel gradients, reduced sequentially afterwards so
            // the summation order never depends on the thread count.
            std::vector<Real> dk(need_dk ? static_cast<std::size_t>(batch) * cout * csize : 0, 0.0);
            parallel_for(batch, [&](std::int64_t bi) {
                if (need_dx) {
                    std::vector<Real> dcols(static_cast<std::size_t>(csize) * ohw, 0.0);
                    detail::matmul_at_acc(pk.data.data(), n.grad.data() + bi * out_item,
                                          dcols.data(), csize, cout, static_cast<int>(ohw));
                    detail::col2im_acc(dcols.data(), cin, h, w, k, stride, padding, oh, ow,
                                       px.grad.data() + bi * in_item);
                }
                if (need_dk) {
                    std::vector<Real> cols(static_cast<std::size_t>(csize) * ohw);
                    detail::im2col(px.data.data() + bi * in_item, cin, h, w, k, stride,
                                   padding, oh, ow, cols.data());
                    detail::matmul_bt_acc(n.grad.data() + bi * out_item, cols.data(),
                                          dk.data() + bi * cout * csize, cout,
                                          static_cast<int>(ohw), csize);
                }
            });
            if (need_dk)
                for (int bi = 0; bi < batch; ++bi) {
                    const Real* src = dk.data() + static_cast<std::size_t>(bi) * cout * csize;
                    for (int i = 0; i < cout * csize; ++i) pk.grad[i] += src[i];
                }
        });

    Real* od = out.mutable_data().data();
    const Real* xd = x.data().data();
    const Real* kd = kernel.data().data();
    parallel_for(batch, [&](std::int64_t bi) {
        std::vector<Real> cols(static_cast<std::size_t>(csize) * ohw);
        detail::im2col(xd + bi * in_item, cin, h, w, k, stride, padding, oh, ow, cols.data());
        detail::matmul_acc(kd, cols.data(), od + bi * out_item, cout, csize,
                           static_cast<int>(ohw));
    });
    return out;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, int stride,
                        int padding, int output_padding) {
    require_rank("conv2d_transpose", x, 4);
    require_rank("conv2d_transpose", kernel, 4);
    if (stride < 1) throw ShapeError("conv2d_transpose: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d_transpose: padding must be >= 0");
    if (output_padding < 0 || output_padding >= stride)
        throw ShapeError("conv2d_transpose: output_padding " + std::to_string(output_padding) +
                         " must lie in [0, stride)");
    if (kernel.dim(2) != kernel.dim(3))
        throw ShapeError("conv2d_transpose: kernel must be square, got " +
                         shape_str(kernel.shape()));
    if (kernel.dim(0) != x.dim(1))
        throw ShapeError("conv2d_transpose: input channels " + shape_str(x.shape()) +
                         " do not match kernel " + shape_str(kernel.shape()));
    const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = kernel.dim(1), k = kernel.dim(2);
    const int oh = (h - 1) * stride - 2 * padding + k + output_padding;
    const int ow = (w - 1) * stride - 2 * padding + k + output_padding;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d_transpose: output extent " + std::to_string(oh) + "x" +
                         std::to_string(ow) + " is empty");
    const int csize = cout * k * k;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t in_item = static_cast<std::size_t>(cin) * hw;
    const std::size_t out_item = static_cast<std::size_t>(cout) * oh * ow;

    Tensor out = make_op(
        "conv2d_transpose", {batch, cout, oh, ow}, {x, kernel},
        [batch, cin, h, w, cout, k, stride, padding, oh, ow, csize, hw, in_item,
         out_item](TensorNode& n) {
            TensorNode& px = *n.parents[0];
            TensorNode& pk = *n.parents[1];
            const bool need_dx = px.requires_grad;
            const bool need_dk = pk.requires_grad;
            if (!need_dx && !need_dk) return;
            std::vector<Real> dk(need_dk ? static_cast<std::size_t>(batch) * cin * csize : 0, 0.0);
            parallel_for(batch, [&](std::int64_t bi) {
                std::vector<Real> dcols(static_cast<std::size_t>(csize) * hw);
                detail::im2col(n.grad.data() + bi * out_item, cout, oh, ow, k, stride,
                               padding, h, w, dcols.data());
                if (need_dx)
                    detail::matmul_acc(pk.data.data(), dcols.data(),
                                       px.grad.data() + bi * in_item, cin, csize,
                                       static_cast<int>(hw));
                if (need_dk)
                    detail::matmul_bt_acc(px.data.data() + bi * in_item, dcols.data(),
                                          dk.data() + bi * cin * csize, cin,
                                          static_cast<int>(hw), csize);
            });
            if (need_dk)
                for (int bi = 0; bi < batch; ++bi) {
                    const Real* src = dk.data() + static_cast<std::size_t>(bi) * cin * csize;
                    for (int i = 0; i < cin * csize; ++i) pk.grad[i] += src[i];
                }
        });

    Real* od = out.mutable_data().data();
    const Real* xd = x.data().data();
    const Real* kd = kernel.data().data();
    parallel_for(batch, [&](std::int64_t bi) {
        std::vector<Real> cols(static_cast<std::size_t>(csize) * hw, 0.0);
        detail::matmul_at_acc(kd, xd + bi * in_item, cols.data(), csize, cin,
                              static_cast<int>(hw));
        detail::col2im_acc(cols.data(), cout, oh, ow, k, stride, padding, h, w,
                           od + bi * out_item);
    });
    return out;
}

Tensor instance_norm(const Tensor& x, Real eps) {
    require_rank("instance_norm", x, 4);
    if (!(eps > 0.0)) throw ShapeError("instance_norm: eps must be positive");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t m = static_cast<std::size_t>(h) * w;
    const int slices = batch * c;
    auto istd = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(slices));

    Tensor out = make_op("instance_norm", x.shape(), {x},
                         [slices, m, istd](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        parallel_for(slices, [&](std::int64_t s) {
            const Real* g = n.grad.data() + s * m;
            const Real* y = n.data.data() + s * m;
            Real* dx = p.grad.data() + s * m;
            Real gm = 0.0, gym = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                gm += g[i];
                gym += g[i] * y[i];
            }
            gm /= static_cast<Real>(m);
            gym /= static_cast<Real>(m);
            const Real is = (*istd)[static_cast<std::size_t>(s)];
            for (std::size_t i = 0; i < m; ++i) dx[i] += is * (g[i] - gm - y[i] * gym);
        });
    });

    Real* od = out.mutable_data().data();
    const Real* xd = x.data().data();
    parallel_for(slices, [&](std::int64_t s) {
        const Real* src = xd + s * m;
        Real mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += src[i];
        mean /= static_cast<Real>(m);
        Real var = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const Real d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<Real>(m);
        const Real is = 1.0 / std::sqrt(var + eps);
        (*istd)[static_cast<std::size_t>(s)] = is;
        Real* dst = od + s * m;
        for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mean) * is;
    });
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    require_rank("add_channel_bias", x, 4);
    require_rank("add_channel_bias", bias, 1);
    if (bias.dim(0) != x.dim(1))
        throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
    const int batch = x.dim(0), c = x.dim(1);
    const std::size_t m = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor out = make_op("add_channel_bias", x.shape(), {x, bias},
                         [batch, c, m](TensorNode& n) {
        TensorNode& px = *n.parents[0];
        TensorNode& pb = *n.parents[1];
        if (px.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) px.grad[i] += n.grad[i];
        if (pb.requires_grad)
            for (int bi = 0; bi < batch; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    const Real* g =
                        n.grad.data() + (static_cast<std::size_t>(bi) * c + ci) * m;
                    Real s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += g[i];
                    pb.grad[ci] += s;
                }
    });
    auto od = out.mutable_data();
    auto xd = x.data();
    auto bd = bias.data();
    for (int bi = 0; bi < batch; ++bi)
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t base = (static_cast<std::size_t>(bi) * c + ci) * m;
            for (std::size_t i = 0; i < m; ++i) od[base + i] = xd[base + i] + bd[ci];
        }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_rank("softmax_cross_entropy", logits, 2);
    const int rows = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != rows)
        throw UsageError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
    for (int r = 0; r < rows; ++r)
        if (labels[r] < 0 || labels[r] >= classes)
            throw UsageError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                             " outside [0, " + std::to_string(classes) + ")");

    Tensor out = make_op("softmax_cross_entropy", {1}, {logits},
                         [rows, classes, labels](TensorNode& n) {
        TensorNode& p = *n.parents[0];
        if (!p.requires_grad) return;
        const Real g = n.grad[0] / static_cast<Real>(rows);
        for (int r = 0; r < rows; ++r) {
            const Real* l = p.data.data() + static_cast<std::size_t>(r) * classes;
            Real* dl = p.grad.data() + static_cast<std::size_t>(r) * classes;
            Real mx = l[0];
            for (int j = 1; j < classes; ++j) mx = std::max(mx, l[j]);
            Real denom = 0.0;
            for (int j = 0; j < classes; ++j) denom += std::exp(l[j] - mx);
            for (int j = 0; j < classes; ++j) {
                const Real p_j = std::exp(l[j] - mx) / denom;
                dl[j] += g * (p_j - (j == labels[r] ? 1.0 : 0.0));
            }
        }
    });

    const Real* ld = logits.data().data();
    Real total = 0.0;
    for (int r = 0; r < rows; ++r) {
        const Real* l = ld + static_cast<std::size_t>(r) * classes;
        Real mx = l[0];
        for (int j = 1; j < classes; ++j) mx = std::max(mx, l[j]);
        Real denom = 0.0;
        for (int j = 0; j < classes; ++j) denom += std::exp(l[j] - mx);
        total += mx + std::log(denom) - l[labels[r]];
    }
    out.mutable_data()[0] = total / static_cast<Real>(rows);
    return out;
}

}  // namespace cyclevae
