#include "a2d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace a2d {

namespace {

constexpr double kKlEps = 1e-9;

void check_min_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() < r)
        throw ShapeError(std::string(op) + ": tensor of shape " + shape_str(t.shape()) +
                         " has rank < " + std::to_string(r));
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

std::vector<double>& grad_of(const std::shared_ptr<TensorNode>& n) { return n->grad_buffer(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_min_rank(a, 2, "matmul");
    check_min_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    const std::size_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
        throw ShapeError("matmul: batch dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const Shape& batch = abatch.empty() ? bbatch : abatch;
    const std::size_t nb = numel(batch);
    const bool a_shared = abatch.empty() && !bbatch.empty();
    const bool b_shared = bbatch.empty() && !abatch.empty();

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::make(std::move(out_shape), "matmul", {a, b});

    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t t = 0; t < nb; ++t) {
        const double* at = ad + (a_shared ? 0 : t * m * k);
        const double* bt = bd + (b_shared ? 0 : t * k * n);
        double* ot = od + t * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = ot + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = at[i * k + p];
                if (av == 0.0) continue;
                const double* brow = bt + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }

    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, m, k, n, nb, a_shared, b_shared]() {
            auto& an = on->inputs[0];
            auto& bn = on->inputs[1];
            const double* g = on->grad.data();
            const double* ad = an->value.data();
            const double* bd = bn->value.data();
            if (an->requires_grad) {
                double* da = grad_of(an).data();
                for (std::size_t t = 0; t < nb; ++t) {
                    const double* gt = g + t * m * n;
                    const double* bt = bd + (b_shared ? 0 : t * k * n);
                    double* dat = da + (a_shared ? 0 : t * m * k);
                    // dA = g . B^T
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            const double* grow = gt + i * n;
                            const double* brow = bt + p * n;
                            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                            dat[i * k + p] += s;
                        }
                }
            }
            if (bn->requires_grad) {
                double* db = grad_of(bn).data();
                for (std::size_t t = 0; t < nb; ++t) {
                    const double* gt = g + t * m * n;
                    const double* at = ad + (a_shared ? 0 : t * m * k);
                    double* dbt = db + (b_shared ? 0 : t * k * n);
                    // dB = A^T . g
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const double av = at[i * k + p];
                            if (av == 0.0) continue;
                            const double* grow = gt + i * n;
                            double* dbrow = dbt + p * n;
                            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                        }
                }
            }
        };
    }
    return out;
}

Tensor transpose_last_two(const Tensor& x) {
    check_min_rank(x, 2, "transpose_last_two");
    const std::size_t r = x.shape()[x.rank() - 2], c = x.shape()[x.rank() - 1];
    const std::size_t nb = x.size() / (r * c);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    Tensor out = Tensor::make(std::move(out_shape), "transpose_last_two", {x});
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t t = 0; t < nb; ++t)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) od[t * r * c + j * r + i] = xd[t * r * c + i * c + j];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, r, c, nb]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            for (std::size_t t = 0; t < nb; ++t)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        dx[t * r * c + i * c + j] += g[t * r * c + j * r + i];
        };
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    Tensor out = Tensor::make(std::move(new_shape), "reshape", {x});
    out.data() = x.data();
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += g[i];
        };
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    bool suffix = false;
    if (!same && b.rank() <= a.rank()) {
        suffix = std::equal(b.shape().begin(), b.shape().end(),
                            a.shape().end() - static_cast<long>(b.rank()));
    }
    if (!same && !suffix)
        throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not compatible");
    Tensor out = Tensor::make(a.shape(), "add", {a, b});
    const std::size_t bn = b.size();
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] + bd[i % bn];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, bn]() {
            auto& an = on->inputs[0];
            auto& bnn = on->inputs[1];
            const double* g = on->grad.data();
            const std::size_t total = on->grad.size();
            if (an->requires_grad) {
                double* da = grad_of(an).data();
                for (std::size_t i = 0; i < total; ++i) da[i] += g[i];
            }
            if (bnn->requires_grad) {
                double* db = grad_of(bnn).data();
                for (std::size_t i = 0; i < total; ++i) db[i % bn] += g[i];
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::make(x.shape(), "scale", {x});
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) od[i] = c * xd[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, c]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += c * g[i];
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    Tensor out = Tensor::make(a.shape(), "mul", {a, b});
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] * bd[i];
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on]() {
            auto& an = on->inputs[0];
            auto& bn = on->inputs[1];
            const double* g = on->grad.data();
            if (an->requires_grad) {
                double* da = grad_of(an).data();
                const double* bd = bn->value.data();
                for (std::size_t i = 0; i < on->grad.size(); ++i) da[i] += g[i] * bd[i];
            }
            if (bn->requires_grad) {
                double* db = grad_of(bn).data();
                const double* ad = an->value.data();
                for (std::size_t i = 0; i < on->grad.size(); ++i) db[i] += g[i] * ad[i];
            }
        };
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::make(x.shape(), "relu", {x});
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            const double* xd = xn->value.data();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xd[i] > 0.0) dx[i] += g[i];
        };
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::make({1}, "sum", {x});
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.data()[0] = s;
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double g = on->grad[0];
            for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += g;
        };
    }
    return out;
}

Tensor softmax_rows(const Tensor& x, const Tensor* mask) {
    check_min_rank(x, 1, "softmax_rows");
    if (mask && mask->shape() != x.shape())
        throw ShapeError("softmax_rows: mask shape " + shape_str(mask->shape()) +
                         " does not match input " + shape_str(x.shape()));
    const std::size_t c = last_dim(x);
    const std::size_t rows = x.size() / c;
    Tensor out = Tensor::make(x.shape(), "softmax_rows", {x});
    const double* xd = x.data().data();
    const double* md = mask ? mask->data().data() : nullptr;
    double* od = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * c;
        const double* mr = md ? md + r * c : nullptr;
        double* yr = od + r * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (!mr || mr[j] > 0.5) mx = std::max(mx, xr[j]);
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked -> zeros
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!mr || mr[j] > 0.5) {
                yr[j] = std::exp(xr[j] - mx);
                s += yr[j];
            }
        }
        for (std::size_t j = 0; j < c; ++j)
            if (!mr || mr[j] > 0.5) yr[j] /= s;
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, rows, c]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            const double* y = on->value.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * c;
                const double* yr = y + r * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
                double* dxr = dx + r * c;
                // masked entries have y == 0, so they contribute nothing
                for (std::size_t j = 0; j < c; ++j) dxr[j] += yr[j] * (gr[j] - dot);
            }
        };
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& x) {
    check_min_rank(x, 1, "log_softmax_rows");
    const std::size_t c = last_dim(x);
    const std::size_t rows = x.size() / c;
    Tensor out = Tensor::make(x.shape(), "log_softmax_rows", {x});
    const double* xd = x.data().data();
    double* od = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * c;
        double* yr = od + r * c;
        double mx = xr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(xr[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] - lse;
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, rows, c]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            const double* y = on->value.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * c;
                const double* yr = y + r * c;
                double gs = 0.0;
                for (std::size_t j = 0; j < c; ++j) gs += gr[j];
                double* dxr = dx + r * c;
                for (std::size_t j = 0; j < c; ++j) dxr[j] += gr[j] - std::exp(yr[j]) * gs;
            }
        };
    }
    return out;
}

Tensor kl_rows(const Tensor& p, const Tensor& q, const Tensor* row_mask) {
    if (p.shape() != q.shape())
        throw ShapeError("kl_rows: shapes " + shape_str(p.shape()) + " and " +
                         shape_str(q.shape()) + " differ");
    const std::size_t c = last_dim(p);
    const std::size_t rows = p.size() / c;
    if (row_mask && row_mask->size() != rows)
        throw ShapeError("kl_rows: row mask has " + std::to_string(row_mask->size()) +
                         " entries for " + std::to_string(rows) + " rows");
    Tensor out = Tensor::make({1}, "kl_rows", {p, q});
    const double* pd = p.data().data();
    const double* qd = q.data().data();
    const double* md = row_mask ? row_mask->data().data() : nullptr;
    std::size_t active = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (md && md[r] < 0.5) continue;
        ++active;
        const double* pr = pd + r * c;
        const double* qr = qd + r * c;
        for (std::size_t j = 0; j < c; ++j) {
            if (pr[j] > 0.0) total += pr[j] * (std::log(pr[j]) - std::log(std::max(qr[j], kKlEps)));
        }
    }
    out.data()[0] = active ? total / static_cast<double>(active) : 0.0;
    if (out.requires_grad() && active) {
        TensorNode* on = out.node();
        std::vector<double> mask_copy;
        if (md) mask_copy.assign(md, md + rows);
        on->backprop = [on, rows, c, active, mask_copy = std::move(mask_copy)]() {
            auto& qn = on->inputs[1];  // no gradient to p, ever
            if (!qn->requires_grad) return;
            double* dq = grad_of(qn).data();
            const double* pd = on->inputs[0]->value.data();
            const double* qd = qn->value.data();
            const double g = on->grad[0] / static_cast<double>(active);
            for (std::size_t r = 0; r < rows; ++r) {
                if (!mask_copy.empty() && mask_copy[r] < 0.5) continue;
                const double* pr = pd + r * c;
                const double* qr = qd + r * c;
                double* dqr = dq + r * c;
                for (std::size_t j = 0; j < c; ++j) {
                    // clamped region (q <= eps) has zero derivative
                    if (pr[j] > 0.0 && qr[j] > kKlEps) dqr[j] -= g * pr[j] / qr[j];
                }
            }
        };
    }
    return out;
}

Tensor soft_cross_entropy_rows(const Tensor& log_probs, const Tensor& p, const Tensor* row_mask) {
    if (log_probs.shape() != p.shape())
        throw ShapeError("soft_cross_entropy_rows: shapes " + shape_str(log_probs.shape()) +
                         " and " + shape_str(p.shape()) + " differ");
    const std::size_t c = last_dim(p);
    const std::size_t rows = p.size() / c;
    if (row_mask && row_mask->size() != rows)
        throw ShapeError("soft_cross_entropy_rows: row mask has " +
                         std::to_string(row_mask->size()) + " entries for " +
                         std::to_string(rows) + " rows");
    Tensor out = Tensor::make({1}, "soft_cross_entropy_rows", {log_probs, p});
    const double* lp = log_probs.data().data();
    const double* pd = p.data().data();
    const double* md = row_mask ? row_mask->data().data() : nullptr;
    std::size_t active = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (md && md[r] < 0.5) continue;
        ++active;
        for (std::size_t j = 0; j < c; ++j) total -= pd[r * c + j] * lp[r * c + j];
    }
    out.data()[0] = active ? total / static_cast<double>(active) : 0.0;
    if (out.requires_grad() && active) {
        TensorNode* on = out.node();
        std::vector<double> mask_copy;
        if (md) mask_copy.assign(md, md + rows);
        on->backprop = [on, rows, c, active, mask_copy = std::move(mask_copy)]() {
            auto& ln = on->inputs[0];
            if (!ln->requires_grad) return;
            double* dl = grad_of(ln).data();
            const double* pd = on->inputs[1]->value.data();
            const double g = on->grad[0] / static_cast<double>(active);
            for (std::size_t r = 0; r < rows; ++r) {
                if (!mask_copy.empty() && mask_copy[r] < 0.5) continue;
                for (std::size_t j = 0; j < c; ++j) dl[r * c + j] -= g * pd[r * c + j];
            }
        };
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: expected [n, vocab] logits, got " +
                         shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    for (int t : targets)
        if (t != ignore_id && (t < 0 || static_cast<std::size_t>(t) >= v))
            throw InputError("cross_entropy: target id " + std::to_string(t) +
                             " outside vocab of size " + std::to_string(v));
    Tensor out = Tensor::make({1}, "cross_entropy", {logits});
    const double* xd = logits.data().data();
    std::vector<double> lse(n, 0.0);
    std::size_t active = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] == ignore_id) continue;
        const double* xr = xd + r * v;
        double mx = xr[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(xr[j] - mx);
        lse[r] = mx + std::log(s);
        total += lse[r] - xr[static_cast<std::size_t>(targets[r])];
        ++active;
    }
    out.data()[0] = active ? total / static_cast<double>(active) : 0.0;
    if (out.requires_grad() && active) {
        TensorNode* on = out.node();
        on->backprop = [on, n, v, active, targets, ignore_id, lse = std::move(lse)]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* xd = xn->value.data();
            const double g = on->grad[0] / static_cast<double>(active);
            for (std::size_t r = 0; r < n; ++r) {
                if (targets[r] == ignore_id) continue;
                const double* xr = xd + r * v;
                double* dxr = dx + r * v;
                for (std::size_t j = 0; j < v; ++j) dxr[j] += g * std::exp(xr[j] - lse[r]);
                dxr[static_cast<std::size_t>(targets[r])] -= g;
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = last_dim(x);
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm: gain/bias of sizes " + std::to_string(gain.size()) + "/" +
                         std::to_string(bias.size()) + " for feature dim " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    Tensor out = Tensor::make(x.shape(), "layer_norm", {x, gain, bias});
    const double* xd = x.data().data();
    const double* gd = gain.data().data();
    const double* bd = bias.data().data();
    double* od = out.data().data();
    std::vector<double> mean(rows), inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = xr[j] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv[r] = iv;
        double* yr = od + r * d;
        for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * iv * gd[j] + bd[j];
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, rows, d, mean = std::move(mean), inv = std::move(inv)]() {
            auto& xn = on->inputs[0];
            auto& gn = on->inputs[1];
            auto& bn = on->inputs[2];
            const double* g = on->grad.data();
            const double* xd = xn->value.data();
            const double* gd = gn->value.data();
            double* dx = xn->requires_grad ? grad_of(xn).data() : nullptr;
            double* dg = gn->requires_grad ? grad_of(gn).data() : nullptr;
            double* db = bn->requires_grad ? grad_of(bn).data() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* xr = xd + r * d;
                const double mu = mean[r], iv = inv[r];
                if (dg || db) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (dg) dg[j] += gr[j] * (xr[j] - mu) * iv;
                        if (db) db[j] += gr[j];
                    }
                }
                if (dx) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gg = gr[j] * gd[j];
                        s1 += gg;
                        s2 += gg * (xr[j] - mu) * iv;
                    }
                    s1 /= static_cast<double>(d);
                    s2 /= static_cast<double>(d);
                    double* dxr = dx + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double xh = (xr[j] - mu) * iv;
                        dxr[j] += iv * (gr[j] * gd[j] - s1 - xh * s2);
                    }
                }
            }
        };
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::vector<int>>& ids) {
    if (table.rank() != 2)
        throw ShapeError("embedding_lookup: table must be [vocab, d], got " +
                         shape_str(table.shape()));
    const std::size_t v = table.dim(0), d = table.dim(1);
    const std::size_t b = ids.size();
    const std::size_t l = b ? ids[0].size() : 0;
    for (const auto& row : ids) {
        if (row.size() != l) throw ShapeError("embedding_lookup: ragged id matrix");
        for (int id : row)
            if (id < 0 || static_cast<std::size_t>(id) >= v)
                throw InputError("embedding_lookup: token id " + std::to_string(id) +
                                 " outside vocab of size " + std::to_string(v));
    }
    Tensor out = Tensor::make({b, l, d}, "embedding_lookup", {table});
    const double* td = table.data().data();
    double* od = out.data().data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < l; ++j)
            std::memcpy(od + (i * l + j) * d, td + static_cast<std::size_t>(ids[i][j]) * d,
                        d * sizeof(double));
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, ids, b, l, d]() {
            auto& tn = on->inputs[0];
            if (!tn->requires_grad) return;
            double* dt = grad_of(tn).data();
            const double* g = on->grad.data();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < l; ++j) {
                    double* drow = dt + static_cast<std::size_t>(ids[i][j]) * d;
                    const double* grow = g + (i * l + j) * d;
                    for (std::size_t k = 0; k < d; ++k) drow[k] += grow[k];
                }
        };
    }
    return out;
}

Tensor concat_last_dim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_last_dim: no tensors given");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::size_t total_last = 0;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        Shape pl(p.shape().begin(), p.shape().end() - 1);
        if (pl != lead)
            throw ShapeError("concat_last_dim: leading dims differ, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        widths.push_back(p.shape().back());
        total_last += p.shape().back();
    }
    const std::size_t rows = numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(total_last);
    Tensor out = Tensor::make(std::move(out_shape), "concat_last_dim", parts);
    double* od = out.data().data();
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const double* pd = parts[pi].data().data();
        const std::size_t w = widths[pi];
        for (std::size_t r = 0; r < rows; ++r)
            std::memcpy(od + r * total_last + off, pd + r * w, w * sizeof(double));
        off += w;
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, rows, total_last, widths]() {
            const double* g = on->grad.data();
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < on->inputs.size(); ++pi) {
                auto& pn = on->inputs[pi];
                const std::size_t w = widths[pi];
                if (pn->requires_grad) {
                    double* dp = grad_of(pn).data();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t k = 0; k < w; ++k)
                            dp[r * w + k] += g[r * total_last + off + k];
                }
                off += w;
            }
        };
    }
    return out;
}

Tensor renormalize_rows(const Tensor& x) {
    constexpr double kMin = 1e-12;
    const std::size_t c = last_dim(x);
    const std::size_t rows = x.size() / c;
    Tensor out = Tensor::make(x.shape(), "renormalize_rows", {x});
    const double* xd = x.data().data();
    double* od = out.data().data();
    std::vector<double> sums(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += xd[r * c + j];
        sums[r] = s;
        if (s > kMin)
            for (std::size_t j = 0; j < c; ++j) od[r * c + j] = xd[r * c + j] / s;
        else
            for (std::size_t j = 0; j < c; ++j) od[r * c + j] = xd[r * c + j];
    }
    if (out.requires_grad()) {
        TensorNode* on = out.node();
        on->backprop = [on, rows, c, sums = std::move(sums)]() {
            auto& xn = on->inputs[0];
            if (!xn->requires_grad) return;
            double* dx = grad_of(xn).data();
            const double* g = on->grad.data();
            const double* y = on->value.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double s = sums[r];
                if (s > 1e-12) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                    for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += (g[r * c + j] - dot) / s;
                } else {
                    for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += g[r * c + j];
                }
            }
        };
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    Tensor mask = Tensor::zeros(x.shape());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : mask.data()) m = (u(rng) >= rate) ? keep_scale : 0.0;
    return mul(x, mask);
}

Tensor sinusoidal_positions(std::size_t len, std::size_t d) {
    Tensor pe = Tensor::zeros({len, d});
    double* pd = pe.data().data();
    for (std::size_t pos = 0; pos < len; ++pos)
        for (std::size_t i = 0; i < d; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            pd[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

std::vector<int> argmax_rows(const Tensor& x) {
    const std::size_t c = last_dim(x);
    const std::size_t rows = x.size() / c;
    std::vector<int> out(rows);
    const double* xd = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (xr[j] > xr[best]) best = j;
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace a2d
