#include "vecformer/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "vecformer/errors.hpp"
#include "vecformer/kernels.hpp"

namespace vecformer {

namespace {

namespace kn = kernels;

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw DimensionError(std::string(op) + ": expected 2-d tensor, got " + t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                             " differ");
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

constexpr double kCosNormEps = 1e-8;  // norm clamp in scaled_cosine_error

// Row-wise stable softmax of x/temperature into out (same shape).
void softmax_rows(const Tensor& x, double temperature, Tensor& out) {
    const std::int64_t n = x.rows(), c = x.cols();
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x.data() + i * c;
        double* orow = out.data() + i * c;
        const double m = kn::max(row, static_cast<std::size_t>(c));
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            orow[j] = std::exp((row[j] - m) / temperature);
            z += orow[j];
        }
        kn::scale(orow, 1.0 / z, orow, static_cast<std::size_t>(c));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Node plumbing
// ---------------------------------------------------------------------------

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw ContractError("Var does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw ContractError("Var does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> fn, const char* opname) {
    value.require_finite(opname);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
}

const Tensor& Tape::grad(Var v) {
    Node& n = node(v);
    if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Tape::aux(Var v) const {
    const Node& n = node(v);
    if (n.aux.numel() == 0) throw ContractError("node has no aux tensor");
    return n.aux;
}

Tensor& Tape::gbuf(Var v) {
    Node& n = node(v);
    if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::accum(Var v, const Tensor& g) {
    if (!needs(v)) return;
    Tensor& buf = gbuf(v);
    kn::add(buf.data(), g.data(), buf.data(), static_cast<std::size_t>(buf.numel()));
}

void Tape::backward(Var loss) {
    Node& top = node(loss);
    if (top.value.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + top.value.shape_str());
    gbuf(loss)[0] += 1.0;
    for (std::int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward_fn || !n.requires_grad) continue;
        if (n.grad.numel() == 0) continue;  // not on a path to the loss
        n.backward_fn(*this);
    }
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape(va, vb, "add");
    Tensor out(va.shape());
    kn::add(va.data(), vb.data(), out.data(), static_cast<std::size_t>(out.numel()));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(b), [a, b, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        t.accum(b, g);
    }, "add");
}

Var Tape::add_rowvec(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_2d(va, "add_rowvec");
    if (vb.ndim() != 2 || vb.rows() != 1 || vb.cols() != va.cols())
        throw DimensionError("add_rowvec: shapes " + va.shape_str() + " and " + vb.shape_str());
    Tensor out(va.shape());
    const std::int64_t n = va.rows(), d = va.cols();
    for (std::int64_t i = 0; i < n; ++i)
        kn::add(va.data() + i * d, vb.data(), out.data() + i * d, static_cast<std::size_t>(d));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(b), [a, b, self, n, d](Tape& t) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        if (t.needs(b)) {
            Tensor& gb = t.gbuf(b);
            for (std::int64_t i = 0; i < n; ++i)
                kn::add(gb.data(), g.data() + i * d, gb.data(), static_cast<std::size_t>(d));
        }
    }, "add_rowvec");
}

Var Tape::sub(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape(va, vb, "sub");
    Tensor out(va.shape());
    kn::sub(va.data(), vb.data(), out.data(), static_cast<std::size_t>(out.numel()));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(b), [a, b, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        t.accum(a, g);
        if (t.needs(b)) {
            Tensor& gb = t.gbuf(b);
            kn::axpy(-1.0, g.data(), gb.data(), static_cast<std::size_t>(gb.numel()));
        }
    }, "sub");
}

Var Tape::mul(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_same_shape(va, vb, "mul");
    Tensor out(va.shape());
    kn::mul(va.data(), vb.data(), out.data(), static_cast<std::size_t>(out.numel()));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(b), [a, b, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const std::size_t n = static_cast<std::size_t>(g.numel());
        if (t.needs(a)) {
            Tensor tmp(g.shape());
            kn::mul(g.data(), t.value(b).data(), tmp.data(), n);
            t.accum(a, tmp);
        }
        if (t.needs(b)) {
            Tensor tmp(g.shape());
            kn::mul(g.data(), t.value(a).data(), tmp.data(), n);
            t.accum(b, tmp);
        }
    }, "mul");
}

Var Tape::scale(Var a, double c) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    kn::scale(va.data(), c, out.data(), static_cast<std::size_t>(out.numel()));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, c, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        kn::axpy(c, g.data(), ga.data(), static_cast<std::size_t>(ga.numel()));
    }, "scale");
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require_2d(va, "matmul");
    require_2d(vb, "matmul");
    const std::int64_t p = trans_a ? va.cols() : va.rows();
    const std::int64_t q = trans_a ? va.rows() : va.cols();
    const std::int64_t qb = trans_b ? vb.cols() : vb.rows();
    const std::int64_t r = trans_b ? vb.rows() : vb.cols();
    if (q != qb)
        throw DimensionError("matmul: inner extents differ, " + va.shape_str() + (trans_a ? "^T" : "") +
                             " * " + vb.shape_str() + (trans_b ? "^T" : ""));
    Tensor out({p, r});
    kn::matmul(va.data(), vb.data(), out.data(), static_cast<std::size_t>(p), static_cast<std::size_t>(q),
               static_cast<std::size_t>(r), trans_a, trans_b);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(b), [a, b, self, trans_a, trans_b, p, q, r](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& va2 = t.value(a);
        const Tensor& vb2 = t.value(b);
        const auto sp = static_cast<std::size_t>(p);
        const auto sq = static_cast<std::size_t>(q);
        const auto sr = static_cast<std::size_t>(r);
        if (t.needs(a)) {
            Tensor tmp(va2.shape());
            if (!trans_a && !trans_b)       // dA = g . B^T
                kn::matmul(g.data(), vb2.data(), tmp.data(), sp, sr, sq, false, true);
            else if (!trans_a && trans_b)   // dA = g . B
                kn::matmul(g.data(), vb2.data(), tmp.data(), sp, sr, sq, false, false);
            else if (trans_a && !trans_b)   // dA = B . g^T
                kn::matmul(vb2.data(), g.data(), tmp.data(), sq, sr, sp, false, true);
            else                            // dA = B^T . g^T
                kn::matmul(vb2.data(), g.data(), tmp.data(), sq, sr, sp, true, true);
            t.accum(a, tmp);
        }
        if (t.needs(b)) {
            Tensor tmp(vb2.shape());
            if (!trans_a && !trans_b)       // dB = A^T . g
                kn::matmul(va2.data(), g.data(), tmp.data(), sq, sp, sr, true, false);
            else if (!trans_a && trans_b)   // dB = g^T . A
                kn::matmul(g.data(), va2.data(), tmp.data(), sr, sp, sq, true, false);
            else if (trans_a && !trans_b)   // dB = A . g
                kn::matmul(va2.data(), g.data(), tmp.data(), sq, sp, sr, false, false);
            else                            // dB = g^T . A^T
                kn::matmul(g.data(), va2.data(), tmp.data(), sr, sp, sq, true, true);
            t.accum(b, tmp);
        }
    }, "matmul");
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Var Tape::sigmoid(Var a) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    }, "sigmoid");
}

Var Tape::tanh(Var a) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) out[i] = std::tanh(va[i]);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    }, "tanh");
}

Var Tape::elu(Var a, double alpha) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) {
        kink_margin_ = std::min(kink_margin_, std::abs(va[i]));
        out[i] = va[i] > 0.0 ? va[i] : alpha * std::expm1(va[i]);
    }
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, alpha, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.value(a);
        const Tensor& y = t.node(self).value;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : y[i] + alpha);
    }, "elu");
}

Var Tape::leaky_relu(Var a, double negative_slope) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) {
        kink_margin_ = std::min(kink_margin_, std::abs(va[i]));
        out[i] = va[i] > 0.0 ? va[i] : negative_slope * va[i];
    }
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, negative_slope, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.value(a);
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : negative_slope);
    }, "leaky_relu");
}

Var Tape::abs(Var a) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < va.numel(); ++i) {
        kink_margin_ = std::min(kink_margin_, std::abs(va[i]));
        out[i] = std::abs(va[i]);
    }
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.value(a);
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    }, "abs");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::scalar(kn::sum(va.data(), static_cast<std::size_t>(va.numel())));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, self](Tape& t) {
        const double g = t.node(self).grad[0];
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    }, "sum");
}

Var Tape::mean(Var a) {
    const Tensor& va = value(a);
    if (va.numel() == 0) throw ContractError("mean of empty tensor");
    const double inv = 1.0 / static_cast<double>(va.numel());
    Tensor out = Tensor::scalar(kn::sum(va.data(), static_cast<std::size_t>(va.numel())) * inv);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, inv, self](Tape& t) {
        const double g = t.node(self).grad[0] * inv;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    }, "mean");
}

Var Tape::sqnorm(Var a) {
    const Tensor& va = value(a);
    Tensor out = Tensor::scalar(kn::dot(va.data(), va.data(), static_cast<std::size_t>(va.numel())));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, self](Tape& t) {
        const double g = t.node(self).grad[0];
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        const Tensor& x = t.value(a);
        kn::axpy(2.0 * g, x.data(), ga.data(), static_cast<std::size_t>(ga.numel()));
    }, "sqnorm");
}

// ---------------------------------------------------------------------------
// Softmax and losses
// ---------------------------------------------------------------------------

Var Tape::row_softmax(Var a, double temperature) {
    if (!(temperature > 0.0))
        throw DomainError("row_softmax: temperature must be positive, got " + std::to_string(temperature));
    const Tensor& va = value(a);
    require_2d(va, "row_softmax");
    Tensor out(va.shape());
    softmax_rows(va, temperature, out);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    const std::int64_t n = va.rows(), c = va.cols();
    return push(std::move(out), needs(a), [a, temperature, n, c, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* gr = g.data() + i * c;
            const double* yr = y.data() + i * c;
            double* out_r = ga.data() + i * c;
            const double dot = kn::dot(gr, yr, static_cast<std::size_t>(c));
            for (std::int64_t j = 0; j < c; ++j)
                out_r[j] += yr[j] * (gr[j] - dot) / temperature;
        }
    }, "row_softmax");
}

Var Tape::cross_entropy(Var logits, const std::vector<std::int64_t>& labels,
                        const std::vector<std::int64_t>& mask) {
    const Tensor& z = value(logits);
    require_2d(z, "cross_entropy");
    const std::int64_t n = z.rows(), c = z.cols();
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(n) + " rows");
    if (mask.empty()) throw ContractError("cross_entropy: empty mask");
    Tensor probs({n, c});  // masked rows only, zeros elsewhere
    double loss = 0.0;
    for (std::int64_t row : mask) {
        if (row < 0 || row >= n) throw ContractError("cross_entropy: mask row out of range");
        const std::int64_t y = labels[static_cast<std::size_t>(row)];
        if (y < 0 || y >= c) throw ContractError("cross_entropy: label out of range at row " + std::to_string(row));
        const double* zr = z.data() + row * c;
        double* pr = probs.data() + row * c;
        const double m = kn::max(zr, static_cast<std::size_t>(c));
        double den = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            pr[j] = std::exp(zr[j] - m);
            den += pr[j];
        }
        kn::scale(pr, 1.0 / den, pr, static_cast<std::size_t>(c));
        loss += -(zr[y] - m - std::log(den));
    }
    loss /= static_cast<double>(mask.size());
    auto mk = std::make_shared<std::vector<std::int64_t>>(mask);
    auto lb = std::make_shared<std::vector<std::int64_t>>(labels);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    Var out = push(Tensor::scalar(loss), needs(logits), [logits, mk, lb, c, self](Tape& t) {
        const double g = t.node(self).grad[0] / static_cast<double>(mk->size());
        if (!t.needs(logits)) return;
        Tensor& gz = t.gbuf(logits);
        const Tensor& probs2 = t.node(self).aux;
        for (std::int64_t row : *mk) {
            const double* pr = probs2.data() + row * c;
            double* gr = gz.data() + row * c;
            for (std::int64_t j = 0; j < c; ++j) gr[j] += g * pr[j];
            gr[(*lb)[static_cast<std::size_t>(row)]] -= g;
        }
    }, "cross_entropy");
    node(out).aux = std::move(probs);
    return out;
}

Var Tape::bce_with_logits(Var logits, Tensor targets, const std::vector<std::int64_t>& mask) {
    const Tensor& z = value(logits);
    require_2d(z, "bce_with_logits");
    require_same_shape(z, targets, "bce_with_logits");
    if (mask.empty()) throw ContractError("bce_with_logits: empty mask");
    const std::int64_t n = z.rows(), c = z.cols();
    double loss = 0.0;
    for (std::int64_t row : mask) {
        if (row < 0 || row >= n) throw ContractError("bce_with_logits: mask row out of range");
        const double* zr = z.data() + row * c;
        const double* tr = targets.data() + row * c;
        for (std::int64_t j = 0; j < c; ++j) loss += stable_softplus(zr[j]) - zr[j] * tr[j];
    }
    loss /= static_cast<double>(mask.size());
    auto mk = std::make_shared<std::vector<std::int64_t>>(mask);
    auto tg = std::make_shared<Tensor>(std::move(targets));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(Tensor::scalar(loss), needs(logits), [logits, mk, tg, c, self](Tape& t) {
        const double g = t.node(self).grad[0] / static_cast<double>(mk->size());
        if (!t.needs(logits)) return;
        Tensor& gz = t.gbuf(logits);
        const Tensor& z2 = t.value(logits);
        for (std::int64_t row : *mk) {
            const double* zr = z2.data() + row * c;
            const double* tr = tg->data() + row * c;
            double* gr = gz.data() + row * c;
            for (std::int64_t j = 0; j < c; ++j)
                gr[j] += g * (1.0 / (1.0 + std::exp(-zr[j])) - tr[j]);
        }
    }, "bce_with_logits");
}

Var Tape::scaled_cosine_error(Var target, Var recon, double gamma) {
    if (gamma < 1.0) throw DomainError("scaled_cosine_error: gamma must be >= 1, got " + std::to_string(gamma));
    const Tensor& vt = value(target);
    const Tensor& vr = value(recon);
    require_2d(vt, "scaled_cosine_error");
    require_same_shape(vt, vr, "scaled_cosine_error");
    
    const std::int64_t n = vt.rows(), d = vt.cols();
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* tr = vt.data() + i * d;
        const double* rr = vr.data() + i * d;
        const double nt = std::max(std::sqrt(kn::dot(tr, tr, static_cast<std::size_t>(d))), kCosNormEps);
        const double nr = std::max(std::sqrt(kn::dot(rr, rr, static_cast<std::size_t>(d))), kCosNormEps);
        const double cosv = kn::dot(tr, rr, static_cast<std::size_t>(d)) / (nt * nr);
        loss += std::pow(1.0 - cosv, gamma);
    }
    loss /= static_cast<double>(n);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(Tensor::scalar(loss), needs(target) || needs(recon),
                [target, recon, gamma, n, d, self](Tape& t) {
        const double g0 = t.node(self).grad[0] / static_cast<double>(n);
        const Tensor& vt2 = t.value(target);
        const Tensor& vr2 = t.value(recon);
        const bool nt_grad = t.needs(target);
        const bool nr_grad = t.needs(recon);
        if (!nt_grad && !nr_grad) return;
        for (std::int64_t i = 0; i < n; ++i) {
            const double* tr = vt2.data() + i * d;
            const double* rr = vr2.data() + i * d;
            const auto sd = static_cast<std::size_t>(d);
            const double rawt = std::sqrt(kn::dot(tr, tr, sd));
            const double rawr = std::sqrt(kn::dot(rr, rr, sd));
            const double nt = std::max(rawt, kCosNormEps);
            const double nr = std::max(rawr, kCosNormEps);
            const double ip = kn::dot(tr, rr, sd);
            const double cosv = ip / (nt * nr);
            const double dldc = -gamma * std::pow(1.0 - cosv, gamma - 1.0) * g0;
            if (nr_grad) {
                // dc/dr = t/(nt nr) - c r/nr^2 (second term absent when clamped)
                Tensor& gr = t.gbuf(recon);
                double* grr = gr.data() + i * d;
                kn::axpy(dldc / (nt * nr), tr, grr, sd);
                if (rawr > kCosNormEps) kn::axpy(-dldc * cosv / (nr * nr), rr, grr, sd);
            }
            if (nt_grad) {
                Tensor& gt = t.gbuf(target);
                double* gtr = gt.data() + i * d;
                kn::axpy(dldc / (nt * nr), rr, gtr, sd);
                if (rawt > kCosNormEps) kn::axpy(-dldc * cosv / (nt * nt), tr, gtr, sd);
            }
        }
    }, "scaled_cosine_error");
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

Var Tape::stopgrad(Var a) { return push(value(a), false, nullptr, "stopgrad"); }

Var Tape::st_copy(Var grad_path, Tensor val) {
    require_same_shape(value(grad_path), val, "st_copy");
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(val), needs(grad_path), [grad_path, self](Tape& t) {
        t.accum(grad_path, t.node(self).grad);
    }, "st_copy");
}

Var Tape::dropout(Var a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: p must be in [0,1), got " + std::to_string(p));
    const Tensor& va = value(a);
    Tensor mask(va.shape());
    const double keep = 1.0 - p;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor out(va.shape());
    kn::mul(va.data(), mask.data(), out.data(), static_cast<std::size_t>(out.numel()));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    Var v = push(std::move(out), needs(a), [a, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& m = t.node(self).aux;
        if (!t.needs(a)) return;
        Tensor tmp(g.shape());
        kn::mul(g.data(), m.data(), tmp.data(), static_cast<std::size_t>(g.numel()));
        t.accum(a, tmp);
    }, "dropout");
    node(v).aux = std::move(mask);
    return v;
}

Var Tape::hconcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("hconcat: no parts");
    const std::int64_t n = value(parts[0]).rows();
    std::int64_t total = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor& v = value(p);
        require_2d(v, "hconcat");
        if (v.rows() != n) throw DimensionError("hconcat: row mismatch " + v.shape_str());
        total += v.cols();
        rg = rg || needs(p);
    }
    Tensor out({n, total});
    std::int64_t ofs = 0;
    for (Var p : parts) {
        const Tensor& v = value(p);
        const std::int64_t d = v.cols();
        for (std::int64_t i = 0; i < n; ++i)
            std::copy_n(v.data() + i * d, d, out.data() + i * total + ofs);
        ofs += d;
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), rg, [ps, n, total, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        std::int64_t o = 0;
        for (Var p : *ps) {
            const std::int64_t d = t.value(p).cols();
            if (t.needs(p)) {
                Tensor& gp = t.gbuf(p);
                for (std::int64_t i = 0; i < n; ++i)
                    kn::add(gp.data() + i * d, g.data() + i * total + o, gp.data() + i * d,
                            static_cast<std::size_t>(d));
            }
            o += d;
        }
    }, "hconcat");
}

Var Tape::col_slice(Var a, std::int64_t c0, std::int64_t c1) {
    const Tensor& va = value(a);
    require_2d(va, "col_slice");
    if (c0 < 0 || c1 > va.cols() || c0 >= c1)
        throw DimensionError("col_slice: [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + va.shape_str());
    const std::int64_t n = va.rows(), d = va.cols(), w = c1 - c0;
    Tensor out({n, w});
    for (std::int64_t i = 0; i < n; ++i)
        std::copy_n(va.data() + i * d + c0, w, out.data() + i * w);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, c0, n, d, w, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < n; ++i)
            kn::add(ga.data() + i * d + c0, g.data() + i * w, ga.data() + i * d + c0,
                    static_cast<std::size_t>(w));
    }, "col_slice");
}

Var Tape::gather_rows(Var a, std::vector<std::int64_t> idx) {
    const Tensor& va = value(a);
    require_2d(va, "gather_rows");
    const std::int64_t n = va.rows(), d = va.cols();
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= n)
            throw StructuralError("gather_rows: index " + std::to_string(idx[k]) + " out of range for " +
                                  std::to_string(n) + " rows");
        std::copy_n(va.data() + idx[k] * d, d, out.data() + static_cast<std::int64_t>(k) * d);
    }
    auto ix = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, ix, d, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::size_t k = 0; k < ix->size(); ++k)
            kn::add(ga.data() + (*ix)[k] * d, g.data() + static_cast<std::int64_t>(k) * d,
                    ga.data() + (*ix)[k] * d, static_cast<std::size_t>(d));
    }, "gather_rows");
}

Var Tape::segment_sum(Var a, std::vector<std::int64_t> offsets) {
    const Tensor& va = value(a);
    require_2d(va, "segment_sum");
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != va.rows())
        throw ContractError("segment_sum: bad offsets");
    const std::int64_t s = static_cast<std::int64_t>(offsets.size()) - 1;
    const std::int64_t d = va.cols();
    Tensor out({s, d});
    for (std::int64_t seg = 0; seg < s; ++seg)
        for (std::int64_t e = offsets[static_cast<std::size_t>(seg)]; e < offsets[static_cast<std::size_t>(seg) + 1]; ++e)
            kn::add(out.data() + seg * d, va.data() + e * d, out.data() + seg * d, static_cast<std::size_t>(d));
    auto ofs = std::make_shared<std::vector<std::int64_t>>(std::move(offsets));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, ofs, s, d, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t seg = 0; seg < s; ++seg)
            for (std::int64_t e = (*ofs)[static_cast<std::size_t>(seg)]; e < (*ofs)[static_cast<std::size_t>(seg) + 1]; ++e)
                kn::add(ga.data() + e * d, g.data() + seg * d, ga.data() + e * d, static_cast<std::size_t>(d));
    }, "segment_sum");
}

Var Tape::segment_softmax(Var a, std::vector<std::int64_t> offsets) {
    const Tensor& va = value(a);
    require_2d(va, "segment_softmax");
    if (va.cols() != 1) throw DimensionError("segment_softmax: expected [E x 1], got " + va.shape_str());
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != va.rows())
        throw ContractError("segment_softmax: bad offsets");
    const std::int64_t s = static_cast<std::int64_t>(offsets.size()) - 1;
    Tensor out(va.shape());
    for (std::int64_t seg = 0; seg < s; ++seg) {
        const std::int64_t b = offsets[static_cast<std::size_t>(seg)];
        const std::int64_t e = offsets[static_cast<std::size_t>(seg) + 1];
        if (e == b) continue;
        const double m = kn::max(va.data() + b, static_cast<std::size_t>(e - b));
        double z = 0.0;
        for (std::int64_t i = b; i < e; ++i) {
            out[i] = std::exp(va[i] - m);
            z += out[i];
        }
        for (std::int64_t i = b; i < e; ++i) out[i] /= z;
    }
    auto ofs = std::make_shared<std::vector<std::int64_t>>(std::move(offsets));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, ofs, s, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t seg = 0; seg < s; ++seg) {
            const std::int64_t b = (*ofs)[static_cast<std::size_t>(seg)];
            const std::int64_t e = (*ofs)[static_cast<std::size_t>(seg) + 1];
            double dot = 0.0;
            for (std::int64_t i = b; i < e; ++i) dot += g[i] * y[i];
            for (std::int64_t i = b; i < e; ++i) ga[i] += y[i] * (g[i] - dot);
        }
    }, "segment_softmax");
}

Var Tape::col_broadcast_mul(Var a, Var w) {
    const Tensor& va = value(a);
    const Tensor& vw = value(w);
    require_2d(va, "col_broadcast_mul");
    if (vw.ndim() != 2 || vw.cols() != 1 || vw.rows() != va.rows())
        throw DimensionError("col_broadcast_mul: shapes " + va.shape_str() + " and " + vw.shape_str());
    const std::int64_t n = va.rows(), d = va.cols();
    Tensor out(va.shape());
    for (std::int64_t i = 0; i < n; ++i)
        kn::scale(va.data() + i * d, vw[i], out.data() + i * d, static_cast<std::size_t>(d));
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a) || needs(w), [a, w, n, d, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& va2 = t.value(a);
        const Tensor& vw2 = t.value(w);
        if (t.needs(a)) {
            Tensor& ga = t.gbuf(a);
            for (std::int64_t i = 0; i < n; ++i)
                kn::axpy(vw2[i], g.data() + i * d, ga.data() + i * d, static_cast<std::size_t>(d));
        }
        if (t.needs(w)) {
            Tensor& gw = t.gbuf(w);
            for (std::int64_t i = 0; i < n; ++i)
                gw[i] += kn::dot(g.data() + i * d, va2.data() + i * d, static_cast<std::size_t>(d));
        }
    }, "col_broadcast_mul");
}

Var Tape::repeat_rows_each(Var a, std::int64_t k) {
    const Tensor& va = value(a);
    require_2d(va, "repeat_rows_each");
    if (k < 1) throw ContractError("repeat_rows_each: k must be >= 1");
    const std::int64_t n = va.rows(), d = va.cols();
    Tensor out({n * k, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t t2 = 0; t2 < k; ++t2)
            std::copy_n(va.data() + i * d, d, out.data() + (i * k + t2) * d);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, k, n, d, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t t2 = 0; t2 < k; ++t2)
                kn::add(ga.data() + i * d, g.data() + (i * k + t2) * d, ga.data() + i * d,
                        static_cast<std::size_t>(d));
    }, "repeat_rows_each");
}

Var Tape::tile_rows(Var a, std::int64_t k) {
    const Tensor& va = value(a);
    require_2d(va, "tile_rows");
    if (k < 1) throw ContractError("tile_rows: k must be >= 1");
    const std::int64_t n = va.rows(), d = va.cols();
    Tensor out({n * k, d});
    for (std::int64_t t2 = 0; t2 < k; ++t2)
        std::copy_n(va.data(), n * d, out.data() + t2 * n * d);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, k, n, d, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (!t.needs(a)) return;
        Tensor& ga = t.gbuf(a);
        for (std::int64_t t2 = 0; t2 < k; ++t2)
            kn::add(ga.data(), g.data() + t2 * n * d, ga.data(), static_cast<std::size_t>(n * d));
    }, "tile_rows");
}

Var Tape::spmm(CsrPtr m, CsrPtr mt, Var a) {
    const Tensor& va = value(a);
    require_2d(va, "spmm");
    if (m->n_cols != va.rows())
        throw DimensionError("spmm: sparse " + std::to_string(m->n_rows) + "x" + std::to_string(m->n_cols) +
                             " vs dense " + va.shape_str());
    const std::int64_t d = va.cols();
    auto apply = [d](const Csr& s, const Tensor& x) {
        Tensor out({s.n_rows, d});
        for (std::int64_t r = 0; r < s.n_rows; ++r)
            for (std::int64_t k = s.row_ptr[static_cast<std::size_t>(r)]; k < s.row_ptr[static_cast<std::size_t>(r) + 1]; ++k)
                kn::axpy(s.vals[static_cast<std::size_t>(k)], x.data() + s.col_idx[static_cast<std::size_t>(k)] * d,
                         out.data() + r * d, static_cast<std::size_t>(d));
        return out;
    };
    Tensor out = apply(*m, va);
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(std::move(out), needs(a), [a, mt, apply, self](Tape& t) {
        if (!t.needs(a)) return;
        t.accum(a, apply(*mt, t.node(self).grad));
    }, "spmm");
}

Var Tape::attention(Var q, Var k, Var v) {
    const Tensor& vq = value(q);
    const Tensor& vk = value(k);
    const Tensor& vv = value(v);
    require_2d(vq, "attention");
    require_2d(vk, "attention");
    require_2d(vv, "attention");
    if (vq.cols() != vk.cols())
        throw DimensionError("attention: q " + vq.shape_str() + " vs k " + vk.shape_str());
    if (vk.rows() != vv.rows())
        throw DimensionError("attention: k " + vk.shape_str() + " vs v " + vv.shape_str());
    const std::int64_t n = vq.rows(), dk = vq.cols(), mrows = vk.rows(), dv = vv.cols();
    const double scl = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor w({n, mrows});
    kn::matmul(vq.data(), vk.data(), w.data(), static_cast<std::size_t>(n), static_cast<std::size_t>(dk),
               static_cast<std::size_t>(mrows), false, true);
    kn::scale(w.data(), scl, w.data(), static_cast<std::size_t>(w.numel()));
    softmax_rows(w, 1.0, w);  // in-place safe: each row's max is read first
    Tensor z({n, dv});
    kn::matmul(w.data(), vv.data(), z.data(), static_cast<std::size_t>(n), static_cast<std::size_t>(mrows),
               static_cast<std::size_t>(dv), false, false);

    Var self{static_cast<std::int32_t>(nodes_.size())};
    Var out = push(std::move(z), needs(q) || needs(k) || needs(v),
                   [q, k, v, n, dk, mrows, dv, scl, self](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& w2 = t.node(self).aux;
        const auto sn = static_cast<std::size_t>(n);
        const auto sm = static_cast<std::size_t>(mrows);
        if (t.needs(v)) {
            Tensor tmp({mrows, dv});
            kn::matmul(w2.data(), g.data(), tmp.data(), sm, sn, static_cast<std::size_t>(dv), true, false);
            t.accum(v, tmp);
        }
        if (t.needs(q) || t.needs(k)) {
            // dS = softmax_backward(w, g . V^T), then dQ = scl dS K, dK = scl dS^T Q
            Tensor ds({n, mrows});
            kn::matmul(g.data(), t.value(v).data(), ds.data(), sn, static_cast<std::size_t>(dv), sm,
                       false, true);
            for (std::int64_t i = 0; i < n; ++i) {
                double* dsr = ds.data() + i * mrows;
                const double* wr = w2.data() + i * mrows;
                const double dot = kn::dot(dsr, wr, sm);
                for (std::int64_t j = 0; j < mrows; ++j) dsr[j] = wr[j] * (dsr[j] - dot);
            }
            if (t.needs(q)) {
                Tensor tmp({n, dk});
                kn::matmul(ds.data(), t.value(k).data(), tmp.data(), sn, sm, static_cast<std::size_t>(dk),
                           false, false);
                kn::scale(tmp.data(), scl, tmp.data(), static_cast<std::size_t>(tmp.numel()));
                t.accum(q, tmp);
            }
            if (t.needs(k)) {
                Tensor tmp({mrows, dk});
                kn::matmul(ds.data(), t.value(q).data(), tmp.data(), sm, sn, static_cast<std::size_t>(dk),
                           true, false);
                kn::scale(tmp.data(), scl, tmp.data(), static_cast<std::size_t>(tmp.numel()));
                t.accum(k, tmp);
            }
        }
    }, "attention");
    node(out).aux = std::move(w);
    return out;
}

Var Tape::structure_recon_dense(CsrPtr adj, Var y) {
    const Tensor& vy = value(y);
    require_2d(vy, "structure_recon_dense");
    if (adj->n_rows != vy.rows())
        throw DimensionError("structure_recon_dense: adjacency n=" + std::to_string(adj->n_rows) +
                             " vs " + vy.shape_str());
    const std::int64_t n = vy.rows(), d = vy.cols();
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* yi = vy.data() + i * d;
        std::int64_t k = adj->row_ptr[static_cast<std::size_t>(i)];
        const std::int64_t ke = adj->row_ptr[static_cast<std::size_t>(i) + 1];
        for (std::int64_t j = 0; j < n; ++j) {
            double a = 0.0;
            if (k < ke && adj->col_idx[static_cast<std::size_t>(k)] == j) {
                a = 1.0;
                ++k;
            }
            const double s = 1.0 / (1.0 + std::exp(-kn::dot(yi, vy.data() + j * d, static_cast<std::size_t>(d))));
            const double e = a - s;
            loss += e * e;
        }
    }
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(Tensor::scalar(loss), needs(y), [adj, y, n, d, self](Tape& t) {
        const double g0 = t.node(self).grad[0];
        if (!t.needs(y)) return;
        const Tensor& vy2 = t.value(y);
        Tensor& gy = t.gbuf(y);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* yi = vy2.data() + i * d;
            std::int64_t k = adj->row_ptr[static_cast<std::size_t>(i)];
            const std::int64_t ke = adj->row_ptr[static_cast<std::size_t>(i) + 1];
            for (std::int64_t j = 0; j < n; ++j) {
                double a = 0.0;
                if (k < ke && adj->col_idx[static_cast<std::size_t>(k)] == j) {
                    a = 1.0;
                    ++k;
                }
                const double* yj = vy2.data() + j * d;
                const double s = 1.0 / (1.0 + std::exp(-kn::dot(yi, yj, static_cast<std::size_t>(d))));
                const double gz = g0 * -2.0 * (a - s) * s * (1.0 - s);
                kn::axpy(gz, yj, gy.data() + i * d, static_cast<std::size_t>(d));
                kn::axpy(gz, yi, gy.data() + j * d, static_cast<std::size_t>(d));
            }
        }
    }, "structure_recon_dense");
}

Var Tape::structure_recon_sampled(CsrPtr adj, Var y, std::int64_t n_samples, Rng& rng) {
    const Tensor& vy = value(y);
    require_2d(vy, "structure_recon_sampled");
    if (adj->n_rows != vy.rows())
        throw DimensionError("structure_recon_sampled: adjacency n=" + std::to_string(adj->n_rows) +
                             " vs " + vy.shape_str());
    if (n_samples < 1) throw ContractError("structure_recon_sampled: n_samples must be >= 1");
    const std::int64_t n = vy.rows(), d = vy.cols();
    const std::int64_t n_edges = adj->nnz();
    const std::int64_t n_nonedge = n * n - n_edges;

    // Negative pairs: exhaustive when the budget covers them all (the value is
    // then exact), otherwise uniform with-replacement draws, rescaled.
    auto negs = std::make_shared<std::vector<std::pair<std::int64_t, std::int64_t>>>();
    double neg_w = 1.0;
    if (n_samples >= n_nonedge) {
        negs->reserve(static_cast<std::size_t>(n_nonedge));
        for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t k = adj->row_ptr[static_cast<std::size_t>(i)];
            const std::int64_t ke = adj->row_ptr[static_cast<std::size_t>(i) + 1];
            for (std::int64_t j = 0; j < n; ++j) {
                if (k < ke && adj->col_idx[static_cast<std::size_t>(k)] == j) {
                    ++k;
                    continue;
                }
                negs->emplace_back(i, j);
            }
        }
    } else {
        negs->reserve(static_cast<std::size_t>(n_samples));
        while (static_cast<std::int64_t>(negs->size()) < n_samples) {
            const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
            const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
            if (!adj->has_entry(i, j)) negs->emplace_back(i, j);
        }
        neg_w = static_cast<double>(n_nonedge) / static_cast<double>(n_samples);
    }

    auto sig = [&](const Tensor& m, std::int64_t i, std::int64_t j) {
        return 1.0 / (1.0 + std::exp(-kn::dot(m.data() + i * d, m.data() + j * d, static_cast<std::size_t>(d))));
    };
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = adj->row_ptr[static_cast<std::size_t>(i)]; k < adj->row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
            const double e = 1.0 - sig(vy, i, adj->col_idx[static_cast<std::size_t>(k)]);
            loss += e * e;
        }
    for (const auto& [i, j] : *negs) {
        const double s = sig(vy, i, j);
        loss += neg_w * s * s;
    }
    Var self{static_cast<std::int32_t>(nodes_.size())};
    return push(Tensor::scalar(loss), needs(y), [adj, y, negs, neg_w, n, d, self](Tape& t) {
        const double g0 = t.node(self).grad[0];
        if (!t.needs(y)) return;
        const Tensor& vy2 = t.value(y);
        Tensor& gy = t.gbuf(y);
        auto push_pair = [&](std::int64_t i, std::int64_t j, double a, double w) {
            const double* yi = vy2.data() + i * d;
            const double* yj = vy2.data() + j * d;
            const double s = 1.0 / (1.0 + std::exp(-kn::dot(yi, yj, static_cast<std::size_t>(d))));
            const double gz = g0 * w * -2.0 * (a - s) * s * (1.0 - s);
            kn::axpy(gz, yj, gy.data() + i * d, static_cast<std::size_t>(d));
            kn::axpy(gz, yi, gy.data() + j * d, static_cast<std::size_t>(d));
        };
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t k = adj->row_ptr[static_cast<std::size_t>(i)]; k < adj->row_ptr[static_cast<std::size_t>(i) + 1]; ++k)
                push_pair(i, adj->col_idx[static_cast<std::size_t>(k)], 1.0, 1.0);
        for (const auto& [i, j] : *negs) push_pair(i, j, 0.0, neg_w);
    }, "structure_recon_sampled");
}

}  // namespace vecformer
