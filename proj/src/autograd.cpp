#include "usat/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "usat/errors.hpp"

namespace usat::ag {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
} // namespace

NodeId Tape::push(Mat v, std::function<void(Tape&)> back) {
    Node n;
    n.g = Mat(v.rows, v.cols);
    n.v = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Mat m) { return push(std::move(m)); }

NodeId Tape::param(Param& p) {
    Param* pp = &p;
    const NodeId id = push(p.value);
    nodes_[id].back = [id, pp](Tape& t) {
        const Mat& g = t.grad(id);
        for (size_t i = 0; i < g.d.size(); ++i) pp->grad.d[i] += g.d[i];
    };
    return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
    if (!val(a).same_shape(val(b))) throw ShapeError("add: shape mismatch");
    Mat out = val(a);
    const Mat& vb = val(b);
    for (size_t i = 0; i < out.d.size(); ++i) out.d[i] += vb.d[i];
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, b](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        Mat& gb = t.grad(b);
        for (size_t i = 0; i < g.d.size(); ++i) {
            ga.d[i] += g.d[i];
            gb.d[i] += g.d[i];
        }
    };
    return id;
}

NodeId Tape::add_rowvec(NodeId a, NodeId row) {
    const Mat& va = val(a);
    const Mat& vr = val(row);
    if (vr.rows != 1 || vr.cols != va.cols) throw ShapeError("add_rowvec: bad row shape");
    Mat out = va;
    for (int i = 0; i < out.rows; ++i) {
        double* orow = out.row_ptr(i);
        for (int j = 0; j < out.cols; ++j) orow[j] += vr.d[j];
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, row](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        Mat& gr = t.grad(row);
        for (int i = 0; i < g.rows; ++i) {
            const double* grow = g.row_ptr(i);
            double* garow = ga.row_ptr(i);
            for (int j = 0; j < g.cols; ++j) {
                garow[j] += grow[j];
                gr.d[j] += grow[j];
            }
        }
    };
    return id;
}

NodeId Tape::add_n(const std::vector<NodeId>& xs, double scale) {
    if (xs.empty()) throw ShapeError("add_n: empty input");
    Mat out(val(xs[0]).rows, val(xs[0]).cols);
    for (NodeId x : xs) {
        const Mat& vx = val(x);
        if (!vx.same_shape(out)) throw ShapeError("add_n: shape mismatch");
        for (size_t i = 0; i < out.d.size(); ++i) out.d[i] += vx.d[i];
    }
    for (double& v : out.d) v *= scale;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, xs, scale](Tape& t) {
        const Mat& g = t.grad(id);
        for (NodeId x : xs) {
            Mat& gx = t.grad(x);
            for (size_t i = 0; i < g.d.size(); ++i) gx.d[i] += scale * g.d[i];
        }
    };
    return id;
}

NodeId Tape::scale(NodeId a, double c) {
    Mat out = val(a);
    for (double& v : out.d) v *= c;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, c](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (size_t i = 0; i < g.d.size(); ++i) ga.d[i] += c * g.d[i];
    };
    return id;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    Mat out = usat::matmul(val(a), val(b));
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, b](Tape& t) {
        const Mat& g = t.grad(id);
        matmul_nt_acc(t.grad(a), g, t.val(b));
        matmul_tn_acc(t.grad(b), t.val(a), g);
    };
    return id;
}

NodeId Tape::transpose(NodeId a) {
    Mat out = usat::transpose(val(a));
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
    };
    return id;
}

NodeId Tape::slice_cols(NodeId a, int c0, int c1) {
    const Mat& va = val(a);
    if (c0 < 0 || c1 > va.cols || c0 >= c1) throw ShapeError("slice_cols: bad range");
    Mat out(va.rows, c1 - c0);
    for (int i = 0; i < va.rows; ++i)
        std::copy(va.row_ptr(i) + c0, va.row_ptr(i) + c1, out.row_ptr(i));
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, c0](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (int i = 0; i < g.rows; ++i) {
            const double* grow = g.row_ptr(i);
            double* garow = ga.row_ptr(i) + c0;
            for (int j = 0; j < g.cols; ++j) garow[j] += grow[j];
        }
    };
    return id;
}

NodeId Tape::concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input");
    int cols = 0;
    const int rows = val(xs[0]).rows;
    for (NodeId x : xs) {
        if (val(x).rows != rows) throw ShapeError("concat_cols: row mismatch");
        cols += val(x).cols;
    }
    Mat out(rows, cols);
    int off = 0;
    for (NodeId x : xs) {
        const Mat& vx = val(x);
        for (int i = 0; i < rows; ++i)
            std::copy(vx.row_ptr(i), vx.row_ptr(i) + vx.cols, out.row_ptr(i) + off);
        off += vx.cols;
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, xs](Tape& t) {
        const Mat& g = t.grad(id);
        int off = 0;
        for (NodeId x : xs) {
            Mat& gx = t.grad(x);
            for (int i = 0; i < g.rows; ++i) {
                const double* grow = g.row_ptr(i) + off;
                double* gxrow = gx.row_ptr(i);
                for (int j = 0; j < gx.cols; ++j) gxrow[j] += grow[j];
            }
            off += gx.cols;
        }
    };
    return id;
}

NodeId Tape::concat_rows(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: empty input");
    const int cols = val(xs[0]).cols;
    int rows = 0;
    for (NodeId x : xs) {
        if (val(x).cols != cols) throw ShapeError("concat_rows: col mismatch");
        rows += val(x).rows;
    }
    Mat out(rows, cols);
    int off = 0;
    for (NodeId x : xs) {
        const Mat& vx = val(x);
        std::copy(vx.d.begin(), vx.d.end(), out.d.begin() + static_cast<size_t>(off) * cols);
        off += vx.rows;
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, xs](Tape& t) {
        const Mat& g = t.grad(id);
        int off = 0;
        for (NodeId x : xs) {
            Mat& gx = t.grad(x);
            const double* src = g.d.data() + static_cast<size_t>(off) * g.cols;
            for (size_t i = 0; i < gx.d.size(); ++i) gx.d[i] += src[i];
            off += gx.rows;
        }
    };
    return id;
}

NodeId Tape::gather_rows(NodeId a, std::vector<int> idx) {
    const Mat& va = val(a);
    Mat out(static_cast<int>(idx.size()), va.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= va.rows) throw ShapeError("gather_rows: index out of range");
        std::copy(va.row_ptr(idx[i]), va.row_ptr(idx[i]) + va.cols,
                  out.row_ptr(static_cast<int>(i)));
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, idx = std::move(idx)](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (size_t i = 0; i < idx.size(); ++i) {
            const double* grow = g.row_ptr(static_cast<int>(i));
            double* garow = ga.row_ptr(idx[i]);
            for (int j = 0; j < g.cols; ++j) garow[j] += grow[j];
        }
    };
    return id;
}

NodeId Tape::assemble_rows(NodeId src, NodeId fill, std::vector<int> map) {
    const Mat& vs = val(src);
    const Mat& vf = val(fill);
    if (vf.rows != 1 || vf.cols != vs.cols) throw ShapeError("assemble_rows: bad fill shape");
    Mat out(static_cast<int>(map.size()), vs.cols);
    for (size_t t = 0; t < map.size(); ++t) {
        if (map[t] >= vs.rows) throw ShapeError("assemble_rows: index out of range");
        const double* from = (map[t] >= 0) ? vs.row_ptr(map[t]) : vf.d.data();
        std::copy(from, from + vs.cols, out.row_ptr(static_cast<int>(t)));
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, src, fill, map = std::move(map)](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& gs = t.grad(src);
        Mat& gf = t.grad(fill);
        for (size_t r = 0; r < map.size(); ++r) {
            const double* grow = g.row_ptr(static_cast<int>(r));
            double* dst = (map[r] >= 0) ? gs.row_ptr(map[r]) : gf.d.data();
            for (int j = 0; j < g.cols; ++j) dst[j] += grow[j];
        }
    };
    return id;
}

NodeId Tape::gelu(NodeId a) {
    Mat out = val(a);
    for (double& x : out.d) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
        const Mat& g = t.grad(id);
        const Mat& x = t.val(a);
        Mat& ga = t.grad(a);
        for (size_t i = 0; i < x.d.size(); ++i) {
            const double xi = x.d[i];
            const double phi = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
            const double dens = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
            ga.d[i] += g.d[i] * (phi + xi * dens);
        }
    };
    return id;
}

NodeId Tape::layer_norm(NodeId a, NodeId gamma, NodeId beta, double eps) {
    const Mat& x = val(a);
    const Mat& vg = val(gamma);
    const Mat& vb = val(beta);
    if (vg.rows != 1 || vg.cols != x.cols || vb.rows != 1 || vb.cols != x.cols)
        throw ShapeError("layer_norm: bad scale/shift shape");
    const int d = x.cols;
    Mat out(x.rows, d);
    Mat xhat(x.rows, d);
    std::vector<double> inv_std(static_cast<size_t>(x.rows));
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row_ptr(i);
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        double* hr = xhat.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * inv;
            orow[j] = vg.d[j] * hr[j] + vb.d[j];
        }
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, gamma, beta, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Tape& t) {
        const Mat& g = t.grad(id);
        const Mat& vg = t.val(gamma);
        Mat& ga = t.grad(a);
        Mat& gg = t.grad(gamma);
        Mat& gb = t.grad(beta);
        const int d = g.cols;
        for (int i = 0; i < g.rows; ++i) {
            const double* grow = g.row_ptr(i);
            const double* hr = xhat.row_ptr(i);
            double* garow = ga.row_ptr(i);
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dh = grow[j] * vg.d[j];
                sum_dh += dh;
                sum_dh_h += dh * hr[j];
                gg.d[j] += grow[j] * hr[j];
                gb.d[j] += grow[j];
            }
            const double inv = inv_std[static_cast<size_t>(i)];
            const double m1 = sum_dh / d;
            const double m2 = sum_dh_h / d;
            for (int j = 0; j < d; ++j) {
                const double dh = grow[j] * vg.d[j];
                garow[j] += inv * (dh - m1 - hr[j] * m2);
            }
        }
    };
    return id;
}

NodeId Tape::softmax_rows(NodeId a) {
    const Mat& x = val(a);
    Mat out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row_ptr(i);
        double mx = xr[0];
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        double* orow = out.row_ptr(i);
        for (int j = 0; j < x.cols; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            sum += orow[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < x.cols; ++j) orow[j] *= inv;
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
        const Mat& y = t.val(id);
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (int i = 0; i < y.rows; ++i) {
            const double* yr = y.row_ptr(i);
            const double* grow = g.row_ptr(i);
            double dot = 0.0;
            for (int j = 0; j < y.cols; ++j) dot += yr[j] * grow[j];
            double* garow = ga.row_ptr(i);
            for (int j = 0; j < y.cols; ++j) garow[j] += yr[j] * (grow[j] - dot);
        }
    };
    return id;
}

NodeId Tape::attention(NodeId q, NodeId k, NodeId v, double scale) {
    const Mat& Q = val(q);
    const Mat& K = val(k);
    const Mat& V = val(v);
    if (Q.cols != K.cols || K.rows != V.rows) throw ShapeError("attention: shape mismatch");
    const int n = Q.rows, m = K.rows, dh = Q.cols;

    Mat P(n, m);
    const Mat KT = usat::transpose(K);
    for (int i = 0; i < n; ++i) {
        const double* qr = Q.row_ptr(i);
        double* pr = P.row_ptr(i);
        for (int c = 0; c < dh; ++c) {
            const double s = qr[c];
            const double* ktr = KT.row_ptr(c);
            for (int j = 0; j < m; ++j) pr[j] += s * ktr[j];
        }
        double mx = -1e300;
        for (int j = 0; j < m; ++j) {
            pr[j] *= scale;
            mx = std::max(mx, pr[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            pr[j] = std::exp(pr[j] - mx);
            sum += pr[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < m; ++j) pr[j] *= inv;
    }
    Mat O = usat::matmul(P, V);
    const NodeId id = push(std::move(O));
    nodes_[id].back = [id, q, k, v, scale, P = std::move(P)](Tape& t) {
        const Mat& g = t.grad(id); // dO, n x dh
        const Mat& Q = t.val(q);
        const Mat& K = t.val(k);
        const Mat& V = t.val(v);
        // dV += P^T dO
        matmul_tn_acc(t.grad(v), P, g);
        // dP = dO V^T, then dS = P .* (dP - rowsum(dP .* P)) * scale in place
        Mat dS(g.rows, V.rows);
        matmul_nt_acc(dS, g, V);
        for (int i = 0; i < dS.rows; ++i) {
            double* dr = dS.row_ptr(i);
            const double* pr = P.row_ptr(i);
            double dot = 0.0;
            for (int j = 0; j < dS.cols; ++j) dot += dr[j] * pr[j];
            for (int j = 0; j < dS.cols; ++j) dr[j] = pr[j] * (dr[j] - dot) * scale;
        }
        // dQ += dS K ; dK += dS^T Q
        Mat& gq = t.grad(q);
        for (int i = 0; i < dS.rows; ++i) {
            const double* dr = dS.row_ptr(i);
            double* gqr = gq.row_ptr(i);
            for (int j = 0; j < dS.cols; ++j) {
                const double s = dr[j];
                if (s == 0.0) continue;
                const double* kr = K.row_ptr(j);
                for (int c = 0; c < K.cols; ++c) gqr[c] += s * kr[c];
            }
        }
        matmul_tn_acc(t.grad(k), dS, Q);
    };
    return id;
}

NodeId Tape::mean_rows(NodeId a) {
    const Mat& x = val(a);
    if (x.rows == 0) throw ShapeError("mean_rows: empty input");
    Mat out(1, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row_ptr(i);
        for (int j = 0; j < x.cols; ++j) out.d[j] += xr[j];
    }
    const double inv = 1.0 / x.rows;
    for (double& v : out.d) v *= inv;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, a, inv](Tape& t) {
        const Mat& g = t.grad(id);
        Mat& ga = t.grad(a);
        for (int i = 0; i < ga.rows; ++i) {
            double* garow = ga.row_ptr(i);
            for (int j = 0; j < ga.cols; ++j) garow[j] += inv * g.d[j];
        }
    };
    return id;
}

NodeId Tape::masked_mse(NodeId pred, Mat target, std::vector<int> rows) {
    const Mat& p = val(pred);
    if (!p.same_shape(target)) throw ShapeError("masked_mse: shape mismatch");
    if (rows.empty()) throw ShapeError("masked_mse: no rows selected");
    const double denom = static_cast<double>(rows.size()) * p.cols;
    double loss = 0.0;
    for (int r : rows) {
        const double* pr = p.row_ptr(r);
        const double* tr = target.row_ptr(r);
        for (int j = 0; j < p.cols; ++j) {
            const double e = pr[j] - tr[j];
            loss += e * e;
        }
    }
    Mat out(1, 1);
    out.d[0] = loss / denom;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, pred, target = std::move(target), rows = std::move(rows),
                       denom](Tape& t) {
        const double gl = t.grad(id).d[0];
        const Mat& p = t.val(pred);
        Mat& gp = t.grad(pred);
        for (int r : rows) {
            const double* pr = p.row_ptr(r);
            const double* tr = target.row_ptr(r);
            double* gr = gp.row_ptr(r);
            for (int j = 0; j < p.cols; ++j) gr[j] += gl * 2.0 * (pr[j] - tr[j]) / denom;
        }
    };
    return id;
}

NodeId Tape::bce_with_logits(NodeId logits, Mat targets) {
    const Mat& x = val(logits);
    if (!x.same_shape(targets)) throw ShapeError("bce_with_logits: shape mismatch");
    const double n = static_cast<double>(x.size());
    double loss = 0.0;
    for (size_t i = 0; i < x.d.size(); ++i) {
        const double xi = x.d[i];
        const double yi = targets.d[i];
        loss += std::max(xi, 0.0) - xi * yi + std::log1p(std::exp(-std::fabs(xi)));
    }
    Mat out(1, 1);
    out.d[0] = loss / n;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, logits, targets = std::move(targets), n](Tape& t) {
        const double gl = t.grad(id).d[0];
        const Mat& x = t.val(logits);
        Mat& gx = t.grad(logits);
        for (size_t i = 0; i < x.d.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x.d[i]));
            gx.d[i] += gl * (s - targets.d[i]) / n;
        }
    };
    return id;
}

NodeId Tape::softmax_xent(NodeId logits, std::vector<int> labels) {
    const Mat& x = val(logits);
    if (static_cast<int>(labels.size()) != x.rows) throw ShapeError("softmax_xent: label count");
    double loss = 0.0;
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row_ptr(i);
        double mx = xr[0];
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) sum += std::exp(xr[j] - mx);
        loss += mx + std::log(sum) - xr[labels[static_cast<size_t>(i)]];
    }
    Mat out(1, 1);
    out.d[0] = loss / x.rows;
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, logits, labels = std::move(labels)](Tape& t) {
        const double gl = t.grad(id).d[0];
        const Mat& x = t.val(logits);
        Mat& gx = t.grad(logits);
        const double inv_rows = 1.0 / x.rows;
        for (int i = 0; i < x.rows; ++i) {
            const double* xr = x.row_ptr(i);
            double mx = xr[0];
            for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (int j = 0; j < x.cols; ++j) sum += std::exp(xr[j] - mx);
            double* gr = gx.row_ptr(i);
            for (int j = 0; j < x.cols; ++j) {
                const double p = std::exp(xr[j] - mx) / sum;
                const double y = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                gr[j] += gl * (p - y) * inv_rows;
            }
        }
    };
    return id;
}

NodeId Tape::weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& w) {
    if (xs.size() != w.size() || xs.empty()) throw ShapeError("weighted_sum: bad inputs");
    Mat out(1, 1);
    for (size_t i = 0; i < xs.size(); ++i) {
        const Mat& vx = val(xs[i]);
        if (vx.rows != 1 || vx.cols != 1) throw ShapeError("weighted_sum: inputs must be scalar");
        out.d[0] += w[i] * vx.d[0];
    }
    const NodeId id = push(std::move(out));
    nodes_[id].back = [id, xs, w](Tape& t) {
        const double gl = t.grad(id).d[0];
        for (size_t i = 0; i < xs.size(); ++i) t.grad(xs[i]).d[0] += gl * w[i];
    };
    return id;
}

void Tape::backward(NodeId root) {
    const Mat& r = val(root);
    if (r.rows != 1 || r.cols != 1) throw ShapeError("backward: root must be scalar");
    grad(root).d[0] = 1.0;
    for (NodeId id = root; id >= 0; --id)
        if (nodes_[id].back) nodes_[id].back(*this);
}

} // namespace usat::ag
