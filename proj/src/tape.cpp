#include "tabret/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "tabret/param.hpp"

namespace tabret {

Var raw_op(Tape& t, Matrix value, std::function<void(Tape&)> back) {
    Tape::Node n;
    n.grad = Matrix(value.rows, value.cols);
    n.value = std::move(value);
    n.back = std::move(back);
    t.nodes_.push_back(std::move(n));
    return static_cast<Var>(t.nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return raw_op(*this, std::move(value), {}); }

Var Tape::leaf(Parameter& p) {
    Var v = raw_op(*this, p.value, {});
    nodes_[v].param = &p;
    return v;
}

void Tape::backward(Var root) {
    auto& r = nodes_[root];
    if (r.value.rows != 1 || r.value.cols != 1)
        throw std::logic_error("backward root must be scalar");
    r.grad(0, 0) = 1.0;
    for (Var v = root; v >= 0; --v) {
        if (nodes_[v].back) nodes_[v].back(*this);
    }
    for (auto& n : nodes_) {
        if (n.param) add_inplace(n.param->grad, n.grad);
    }
}

namespace {

// Helper creating a node whose backward receives (tape, out_var).
Var make_op(Tape& t, Matrix value, std::function<void(Tape&, Var)> back) {
    struct Holder {
        std::function<void(Tape&, Var)> f;
        Var self = -1;
    };
    auto h = std::make_shared<Holder>();
    h->f = std::move(back);
    Var v = raw_op(t, std::move(value), [h](Tape& t2) {
        if (h->f) h->f(t2, h->self);
    });
    h->self = v;
    return v;
}

}  // namespace

Var op_matmul(Tape& t, Var a, Var b) {
    Matrix out = matmul(t.value(a), t.value(b));
    return make_op(t, std::move(out), [a, b](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        add_inplace(t2.grad(a), matmul_nt(g, t2.value(b)));
        add_inplace(t2.grad(b), matmul_tn(t2.value(a), g));
    });
}

Var op_add(Tape& t, Var a, Var b) {
    Matrix out = t.value(a);
    add_inplace(out, t.value(b));
    return make_op(t, std::move(out), [a, b](Tape& t2, Var self) {
        add_inplace(t2.grad(a), t2.grad(self));
        add_inplace(t2.grad(b), t2.grad(self));
    });
}

Var op_add_rowvec(Tape& t, Var x, Var b) {
    const Matrix& xv = t.value(x);
    const Matrix& bv = t.value(b);
    assert(bv.rows == 1 && bv.cols == xv.cols);
    Matrix out = xv;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out(r, c) += bv(0, c);
    return make_op(t, std::move(out), [x, b](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        add_inplace(t2.grad(x), g);
        Matrix& gb = t2.grad(b);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) gb(0, c) += g(r, c);
    });
}

Var op_mul(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    assert(av.same_shape(bv));
    Matrix out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return make_op(t, std::move(out), [a, b](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        const Matrix& av2 = t2.value(a);
        const Matrix& bv2 = t2.value(b);
        Matrix& ga = t2.grad(a);
        Matrix& gb = t2.grad(b);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i] * bv2.data[i];
            gb.data[i] += g.data[i] * av2.data[i];
        }
    });
}

Var op_relu(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(t, std::move(out), [a](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        const Matrix& av = t2.value(a);
        Matrix& ga = t2.grad(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            if (av.data[i] > 0.0) ga.data[i] += g.data[i];
    });
}

Var op_scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a);
    for (double& v : out.data) v *= s;
    return make_op(t, std::move(out), [a, s](Tape& t2, Var self) {
        axpy_inplace(t2.grad(a), s, t2.grad(self));
    });
}

Var op_layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gamma);
    const Matrix& bv = t.value(beta);
    const int n = xv.rows, d = xv.cols;
    assert(gv.rows == 1 && gv.cols == d && bv.rows == 1 && bv.cols == d);

    auto xhat = std::make_shared<Matrix>(n, d);
    auto inv_sigma = std::make_shared<std::vector<double>>(n);
    Matrix out(n, d);
    for (int r = 0; r < n; ++r) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += xv(r, c);
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            double dv = xv(r, c) - mean;
            var += dv * dv;
        }
        var /= d;  // biased
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[r] = is;
        for (int c = 0; c < d; ++c) {
            double xh = (xv(r, c) - mean) * is;
            (*xhat)(r, c) = xh;
            out(r, c) = xh * gv(0, c) + bv(0, c);
        }
    }
    return make_op(t, std::move(out),
                   [x, gamma, beta, xhat, inv_sigma, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        const Matrix& gv2 = t2.value(gamma);
        Matrix& gx = t2.grad(x);
        Matrix& gg = t2.grad(gamma);
        Matrix& gb = t2.grad(beta);
        const int n2 = g.rows;
        for (int r = 0; r < n2; ++r) {
            double sum_h = 0.0, sum_hx = 0.0;
            for (int c = 0; c < d; ++c) {
                double h = g(r, c) * gv2(0, c);
                sum_h += h;
                sum_hx += h * (*xhat)(r, c);
                gg(0, c) += g(r, c) * (*xhat)(r, c);
                gb(0, c) += g(r, c);
            }
            double mh = sum_h / d, mhx = sum_hx / d;
            double is = (*inv_sigma)[r];
            for (int c = 0; c < d; ++c) {
                double h = g(r, c) * gv2(0, c);
                gx(r, c) += (h - mh - (*xhat)(r, c) * mhx) * is;
            }
        }
    });
}

namespace {

// Accumulates in sorted-value order so reductions over tokens are invariant
// under token permutations down to the last bit. Insertion sort: token counts
// are small and this sits on the attention hot path.
double ordered_sum(std::vector<double>& buf) {
    for (size_t i = 1; i < buf.size(); ++i) {
        double x = buf[i];
        size_t j = i;
        for (; j > 0 && buf[j - 1] > x; --j) buf[j] = buf[j - 1];
        buf[j] = x;
    }
    double s = 0.0;
    for (double x : buf) s += x;
    return s;
}

}  // namespace

Var op_attention(Tape& t, Var q, Var k, Var v, int n_samples, int n_tokens,
                 int n_heads, double dropout_rate, RngState& rng, bool training) {
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    const int d = qv.cols;
    if (d % n_heads != 0) throw std::invalid_argument("token dim not divisible by head count");
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    assert(qv.rows == n_samples * n_tokens);

    // Softmax weights (pre-dropout) and dropout keep-masks, per sample/head.
    auto weights = std::make_shared<std::vector<Matrix>>();
    auto keep = std::make_shared<std::vector<Matrix>>();
    const bool use_dropout = training && dropout_rate > 0.0;
    const double keep_scale = use_dropout ? 1.0 / (1.0 - dropout_rate) : 1.0;
    weights->reserve(static_cast<size_t>(n_samples) * n_heads);

    Matrix out(qv.rows, d);
    for (int i = 0; i < n_samples; ++i) {
        const int base = i * n_tokens;
        for (int h = 0; h < n_heads; ++h) {
            const int coff = h * dh;
            Matrix att(n_tokens, n_tokens);
            std::vector<double> terms(n_tokens);
            for (int a = 0; a < n_tokens; ++a) {
                double mx = -1e300;
                for (int b = 0; b < n_tokens; ++b) {
                    double s = 0.0;
                    for (int c = 0; c < dh; ++c)
                        s += qv(base + a, coff + c) * kv(base + b, coff + c);
                    att(a, b) = s * scale;
                    mx = std::max(mx, att(a, b));
                }
                for (int b = 0; b < n_tokens; ++b) {
                    att(a, b) = std::exp(att(a, b) - mx);
                    terms[b] = att(a, b);
                }
                double z = ordered_sum(terms);
                for (int b = 0; b < n_tokens; ++b) att(a, b) /= z;
            }
            Matrix km;
            if (use_dropout) {
                km = Matrix(n_tokens, n_tokens);
                for (double& m : km.data) m = rng.uniform() >= dropout_rate ? 1.0 : 0.0;
            }
            std::vector<double> mix(n_tokens);
            for (int a = 0; a < n_tokens; ++a) {
                for (int c = 0; c < dh; ++c) {
                    for (int b = 0; b < n_tokens; ++b) {
                        double w = att(a, b);
                        if (use_dropout) w *= km(a, b) * keep_scale;
                        mix[b] = w * vv(base + b, coff + c);
                    }
                    out(base + a, coff + c) = ordered_sum(mix);
                }
            }
            weights->push_back(std::move(att));
            if (use_dropout) keep->push_back(std::move(km));
        }
    }

    return make_op(t, std::move(out),
                   [q, k, v, n_samples, n_tokens, n_heads, dh, scale, weights, keep,
                    use_dropout, keep_scale](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        const Matrix& qv2 = t2.value(q);
        const Matrix& kv2 = t2.value(k);
        const Matrix& vv2 = t2.value(v);
        Matrix& gq = t2.grad(q);
        Matrix& gk = t2.grad(k);
        Matrix& gv = t2.grad(v);
        for (int i = 0; i < n_samples; ++i) {
            const int base = i * n_tokens;
            for (int h = 0; h < n_heads; ++h) {
                const int coff = h * dh;
                const Matrix& att = (*weights)[static_cast<size_t>(i) * n_heads + h];
                const Matrix* km = use_dropout
                    ? &(*keep)[static_cast<size_t>(i) * n_heads + h] : nullptr;
                // dAd(a,b) = sum_c g(a,c) V(b,c); dV(b,c) += sum_a Ad(a,b) g(a,c)
                Matrix datt(n_tokens, n_tokens);
                for (int a = 0; a < n_tokens; ++a) {
                    for (int b = 0; b < n_tokens; ++b) {
                        double s = 0.0;
                        for (int c = 0; c < dh; ++c)
                            s += g(base + a, coff + c) * vv2(base + b, coff + c);
                        double w_ad = att(a, b);
                        double drop = km ? (*km)(a, b) * keep_scale : 1.0;
                        for (int c = 0; c < dh; ++c)
                            gv(base + b, coff + c) +=
                                w_ad * drop * g(base + a, coff + c);
                        datt(a, b) = s * drop;  // through dropout to softmax output
                    }
                }
                // softmax backward then the 1/sqrt(dh) scale
                for (int a = 0; a < n_tokens; ++a) {
                    double dot = 0.0;
                    for (int b = 0; b < n_tokens; ++b) dot += datt(a, b) * att(a, b);
                    for (int b = 0; b < n_tokens; ++b) {
                        double ds = att(a, b) * (datt(a, b) - dot) * scale;
                        for (int c = 0; c < dh; ++c) {
                            gq(base + a, coff + c) += ds * kv2(base + b, coff + c);
                            gk(base + b, coff + c) += ds * qv2(base + a, coff + c);
                        }
                    }
                }
            }
        }
    });
}

Var op_dropout(Tape& t, Var x, double rate, RngState& rng, bool training) {
    if (!training || rate <= 0.0) {
        // identity node so downstream code is uniform
        Matrix out = t.value(x);
        return make_op(t, std::move(out), [x](Tape& t2, Var self) {
            add_inplace(t2.grad(x), t2.grad(self));
        });
    }
    const Matrix& xv = t.value(x);
    const double s = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(xv.data.size());
    Matrix out = xv;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double m = rng.uniform() >= rate ? s : 0.0;
        (*mask)[i] = m;
        out.data[i] *= m;
    }
    return make_op(t, std::move(out), [x, mask](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        Matrix& gx = t2.grad(x);
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * (*mask)[i];
    });
}

Var op_interleave(Tape& t, const std::vector<Var>& cols, int n) {
    const int k = static_cast<int>(cols.size());
    assert(k >= 1);
    const int d = t.value(cols[0]).cols;
    Matrix out(n * k, d);
    for (int j = 0; j < k; ++j) {
        const Matrix& m = t.value(cols[j]);
        assert(m.rows == n && m.cols == d);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) out(i * k + j, c) = m(i, c);
    }
    auto cols_copy = cols;
    return make_op(t, std::move(out), [cols_copy, n, k, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        for (int j = 0; j < k; ++j) {
            Matrix& gj = t2.grad(cols_copy[j]);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) gj(i, c) += g(i * k + j, c);
        }
    });
}

Var op_gather_rows(Tape& t, Var x, std::vector<int> idx) {
    const Matrix& xv = t.value(x);
    const int d = xv.cols;
    Matrix out(static_cast<int>(idx.size()), d);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < d; ++c) out(r, c) = xv(idx[r], c);
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    return make_op(t, std::move(out), [x, ix, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        Matrix& gx = t2.grad(x);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < d; ++c) gx((*ix)[r], c) += g(r, c);
    });
}

Var op_concat_rows(Tape& t, const std::vector<Var>& rows) {
    const int k = static_cast<int>(rows.size());
    const int d = t.value(rows[0]).cols;
    Matrix out(k, d);
    for (int j = 0; j < k; ++j) {
        const Matrix& m = t.value(rows[j]);
        assert(m.rows == 1 && m.cols == d);
        for (int c = 0; c < d; ++c) out(j, c) = m(0, c);
    }
    auto rows_copy = rows;
    return make_op(t, std::move(out), [rows_copy, k, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        for (int j = 0; j < k; ++j) {
            Matrix& gj = t2.grad(rows_copy[j]);
            for (int c = 0; c < d; ++c) gj(0, c) += g(j, c);
        }
    });
}

Var op_add_tile_rows(Tape& t, Var x, Var tile, int n) {
    const Matrix& xv = t.value(x);
    const Matrix& tv = t.value(tile);
    const int k = tv.rows, d = tv.cols;
    assert(xv.rows == n * k && xv.cols == d);
    Matrix out = xv;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            for (int c = 0; c < d; ++c) out(i * k + j, c) += tv(j, c);
    return make_op(t, std::move(out), [x, tile, n, k, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        add_inplace(t2.grad(x), g);
        Matrix& gt = t2.grad(tile);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                for (int c = 0; c < d; ++c) gt(j, c) += g(i * k + j, c);
    });
}

Var op_scatter_fill(Tape& t, Var survivors, Var fill, std::vector<int> dest,
                    int n_rows_out) {
    const Matrix& sv = t.value(survivors);
    const Matrix& fv = t.value(fill);
    const int d = sv.cols;
    assert(fv.rows == 1 && fv.cols == d);
    assert(static_cast<int>(dest.size()) == sv.rows);
    Matrix out(n_rows_out, d);
    for (int r = 0; r < n_rows_out; ++r)
        for (int c = 0; c < d; ++c) out(r, c) = fv(0, c);
    for (int r = 0; r < sv.rows; ++r)
        for (int c = 0; c < d; ++c) out(dest[r], c) = sv(r, c);
    auto dx = std::make_shared<std::vector<int>>(std::move(dest));
    return make_op(t, std::move(out),
                   [survivors, fill, dx, n_rows_out, d](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        Matrix& gs = t2.grad(survivors);
        Matrix& gf = t2.grad(fill);
        std::vector<char> taken(n_rows_out, 0);
        for (int r = 0; r < gs.rows; ++r) {
            taken[(*dx)[r]] = 1;
            for (int c = 0; c < d; ++c) gs(r, c) += g((*dx)[r], c);
        }
        for (int r = 0; r < n_rows_out; ++r)
            if (!taken[r])
                for (int c = 0; c < d; ++c) gf(0, c) += g(r, c);
    });
}

Var op_squared_error(Tape& t, Var pred, const std::vector<double>& target) {
    const Matrix& pv = t.value(pred);
    assert(pv.cols == 1 && pv.rows == static_cast<int>(target.size()));
    Matrix out(pv.rows, 1);
    for (int r = 0; r < pv.rows; ++r) {
        double e = pv(r, 0) - target[r];
        out(r, 0) = e * e;
    }
    auto tgt = std::make_shared<std::vector<double>>(target);
    return make_op(t, std::move(out), [pred, tgt](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        const Matrix& pv2 = t2.value(pred);
        Matrix& gp = t2.grad(pred);
        for (int r = 0; r < g.rows; ++r)
            gp(r, 0) += g(r, 0) * 2.0 * (pv2(r, 0) - (*tgt)[r]);
    });
}

Var op_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
    const Matrix& lv = t.value(logits);
    assert(lv.rows == static_cast<int>(labels.size()));
    auto probs = std::make_shared<Matrix>(softmax_rows(lv));
    Matrix out(lv.rows, 1);
    for (int r = 0; r < lv.rows; ++r) {
        double p = (*probs)(r, labels[r]);
        out(r, 0) = -std::log(std::max(p, 1e-300));
    }
    auto lab = std::make_shared<std::vector<int>>(labels);
    return make_op(t, std::move(out), [logits, probs, lab](Tape& t2, Var self) {
        const Matrix& g = t2.grad(self);
        Matrix& gl = t2.grad(logits);
        for (int r = 0; r < g.rows; ++r) {
            for (int c = 0; c < gl.cols; ++c) {
                double d = (*probs)(r, c) - (c == (*lab)[r] ? 1.0 : 0.0);
                gl(r, c) += g(r, 0) * d;
            }
        }
    });
}

Var op_weighted_sum(Tape& t, Var x, std::vector<double> weights) {
    const Matrix& xv = t.value(x);
    assert(xv.cols == 1 && xv.rows == static_cast<int>(weights.size()));
    double s = 0.0;
    for (int r = 0; r < xv.rows; ++r) s += weights[r] * xv(r, 0);
    Matrix out(1, 1);
    out(0, 0) = s;
    auto w = std::make_shared<std::vector<double>>(std::move(weights));
    return make_op(t, std::move(out), [x, w](Tape& t2, Var self) {
        double g = t2.grad(self)(0, 0);
        Matrix& gx = t2.grad(x);
        for (int r = 0; r < gx.rows; ++r) gx(r, 0) += g * (*w)[r];
    });
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out = logits;
    for (int r = 0; r < out.rows; ++r) {
        double mx = -1e300;
        for (int c = 0; c < out.cols; ++c) mx = std::max(mx, out(r, c));
        double z = 0.0;
        for (int c = 0; c < out.cols; ++c) {
            out(r, c) = std::exp(out(r, c) - mx);
            z += out(r, c);
        }
        for (int c = 0; c < out.cols; ++c) out(r, c) /= z;
    }
    return out;
}

}  // namespace tabret
