// Copyright 2026 The jvtoy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "jvtoy/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace jvtoy {

using detail::Node;

namespace {

Node &parent(Node &self, std::size_t i) { return *self.parents[i]; }

void require_2d(const Tensor &t, const char *op) {
    if (t.dim() != 2) {
        throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
    }
}

void require_same(const Tensor &a, const Tensor &b, const char *op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

bool is_row_broadcast(const Tensor &a, const Tensor &b) {
    if (a.dim() != 2) {
        return false;
    }
    const auto &s = b.shape();
    return (s.size() == 1 && s[0] == a.cols()) || (s.size() == 2 && s[0] == 1 && s[1] == a.cols());
}

// out = a (+/-) b with optional row broadcast of b.
Tensor add_impl(const Tensor &a, const Tensor &b, double sign, const char *op) {
    const bool bcast = a.shape() != b.shape();
    if (bcast && !is_row_broadcast(a, b)) {
        throw ShapeError(std::string(op) + ": cannot combine " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(av.size());
    const std::size_t n = bcast ? b.numel() : av.size();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + sign * bv[bcast ? i % n : i];
    }
    return Tensor::make_result(a.shape(), std::move(out), op, {a, b}, [sign, bcast, n](Node &self) {
        const auto &g = self.grad;
        Node &pa = parent(self, 0);
        Node &pb = parent(self, 1);
        if (pa.requires_grad) {
            auto &ga = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (pb.requires_grad) {
            auto &gb = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[bcast ? i % n : i] += sign * g[i];
            }
        }
    });
}

template <typename F, typename D>
Tensor unary(const Tensor &x, const char *op, F f, D df) {
    auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return Tensor::make_result(x.shape(), std::move(out), op, {x}, [df](Node &self) {
        Node &px = parent(self, 0);
        if (!px.requires_grad) {
            return;
        }
        auto &gx = px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            gx[i] += self.grad[i] * df(px.value[i], self.value[i]);
        }
    });
}

} // namespace

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

AttentionMask AttentionMask::causal(std::size_t n) {
    AttentionMask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            m.set(i, j, true);
        }
    }
    return m;
}

AttentionMask AttentionMask::diagonal(std::size_t n) {
    AttentionMask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i) {
        m.set(i, i, true);
    }
    return m;
}

std::vector<double> AttentionMask::additive() const {
    std::vector<double> out(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        out[i] = bits_[i] ? 0.0 : kBlocked;
    }
    return out;
}

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(m * n, 0.0);
    // Per output element the accumulation runs over k in order regardless of
    // m and n, so row subsets reproduce the same bits.
    for (std::size_t i = 0; i < m; ++i) {
        double *orow = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            const double *brow = bv.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node &self) {
        Node &pa = parent(self, 0);
        Node &pb = parent(self, 1);
        const auto &g = self.grad;
        if (pa.requires_grad) {
            auto &ga = pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double *grow = g.data() + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double *brow = pb.value.data() + kk * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += grow[j] * brow[j];
                    }
                    ga[i * k + kk] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            auto &gb = pb.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double *grow = g.data() + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = pa.value[i * k + kk];
                    double *gbrow = gb.data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += aik * grow[j];
                    }
                }
            }
        }
    });
}

Tensor transpose(const Tensor &a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = av[i * n + j];
        }
    }
    return Tensor::make_result({n, m}, std::move(out), "transpose", {a}, [m, n](Node &self) {
        Node &pa = parent(self, 0);
        if (!pa.requires_grad) {
            return;
        }
        auto &ga = pa.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga[i * n + j] += self.grad[j * m + i];
            }
        }
    });
}

Tensor add(const Tensor &a, const Tensor &b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor &a, const Tensor &b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor &a, const Tensor &b) {
    require_same(a, b, "mul");
    auto av = a.data();
    auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node &self) {
        Node &pa = parent(self, 0);
        Node &pb = parent(self, 1);
        if (pa.requires_grad) {
            auto &ga = pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i] * pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto &gb = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i] += self.grad[i] * pa.value[i];
            }
        }
    });
}

Tensor scale(const Tensor &a, double s) {
    return unary(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor &a, double s) {
    return unary(
        a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor &a) { return scale(a, -1.0); }

Tensor sum(const Tensor &a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v;
    }
    return Tensor::make_result({}, {acc}, "sum", {a}, [](Node &self) {
        Node &pa = parent(self, 0);
        if (!pa.requires_grad) {
            return;
        }
        auto &ga = pa.ensure_grad();
        for (double &g : ga) {
            g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor &a) {
    if (a.numel() == 0) {
        throw ShapeError("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
    }
    auto xv = x.data();
    auto gv = gain.data();
    auto bv = bias.data();
    std::vector<double> xhat(m * n), inv_std(m), out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double *row = xv.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            var += (row[j] - mu) * (row[j] - mu);
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
        }
    }
    return Tensor::make_result(
        {m, n}, std::move(out), "layer_norm", {x, gain, bias},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node &self) {
            Node &px = parent(self, 0);
            Node &pg = parent(self, 1);
            Node &pb = parent(self, 2);
            const auto &g = self.grad;
            if (pg.requires_grad) {
                auto &gg = pg.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                }
            }
            if (pb.requires_grad) {
                auto &gb = pb.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[j] += g[i * n + j];
                    }
                }
            }
            if (px.requires_grad) {
                auto &gx = px.ensure_grad();
                std::vector<double> dxhat(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        dxhat[j] = g[i * n + j] * pg.value[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[i * n + j];
                    }
                    mean_d /= static_cast<double>(n);
                    mean_dx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        gx[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                    }
                }
            }
        });
}

Tensor gelu(const Tensor &x) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    return unary(
        x, "gelu",
        [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); },
        [](double v, double) {
            const double u = c * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        });
}

Tensor tanh(const Tensor &x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log_sigmoid(const Tensor &x) {
    return unary(
        x, "log_sigmoid", [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(v)); });
}

Tensor softmax_masked(const Tensor &scores, std::span<const double> additive_mask) {
    require_2d(scores, "softmax_masked");
    const std::size_t m = scores.rows(), n = scores.cols();
    if (!additive_mask.empty() && additive_mask.size() != m * n) {
        throw ShapeError("softmax_masked: mask has " + std::to_string(additive_mask.size()) + " entries, expected " +
                         std::to_string(m * n));
    }
    auto sv = scores.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = kBlocked;
        for (std::size_t j = 0; j < n; ++j) {
            const double madd = additive_mask.empty() ? 0.0 : additive_mask[i * n + j];
            if (madd == kBlocked) {
                continue;
            }
            mx = std::max(mx, sv[i * n + j] + madd);
        }
        if (mx == kBlocked) {
            throw ShapeError("softmax_masked: row " + std::to_string(i) + " has no visible entries");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double madd = additive_mask.empty() ? 0.0 : additive_mask[i * n + j];
            if (madd == kBlocked) {
                continue;
            }
            out[i * n + j] = std::exp(sv[i * n + j] + madd - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] /= z;
        }
    }
    return Tensor::make_result({m, n}, std::move(out), "softmax_masked", {scores}, [m, n](Node &self) {
        Node &ps = parent(self, 0);
        if (!ps.requires_grad) {
            return;
        }
        auto &gs = ps.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += self.grad[i * n + j] * self.value[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                gs[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
            }
        }
    });
}

Tensor log_softmax(const Tensor &x) {
    require_2d(x, "log_softmax");
    const std::size_t m = x.rows(), n = x.cols();
    auto xv = x.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double *row = xv.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            z += std::exp(row[j] - mx);
        }
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = row[j] - lz;
        }
    }
    return Tensor::make_result({m, n}, std::move(out), "log_softmax", {x}, [m, n](Node &self) {
        Node &px = parent(self, 0);
        if (!px.requires_grad) {
            return;
        }
        auto &gx = px.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gsum += self.grad[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                gx[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gsum;
            }
        }
    });
}

Tensor embedding_lookup(const Tensor &table, std::span<const std::size_t> ids) {
    require_2d(table, "embedding_lookup");
    const std::size_t v = table.rows(), d = table.cols();
    auto tv = table.data();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) {
            throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(v) + " rows");
        }
        std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return Tensor::make_result({ids.size(), d}, std::move(out), "embedding_lookup", {table},
                               [d, idv = std::move(idv)](Node &self) {
                                   Node &pt = parent(self, 0);
                                   if (!pt.requires_grad) {
                                       return;
                                   }
                                   auto &gt = pt.ensure_grad();
                                   for (std::size_t i = 0; i < idv.size(); ++i) {
                                       for (std::size_t j = 0; j < d; ++j) {
                                           gt[idv[i] * d + j] += self.grad[i * d + j];
                                       }
                                   }
                               });
}

Tensor cross_entropy(const Tensor &logits, std::span<const std::size_t> targets, const std::vector<bool> &row_mask,
                     Reduction reduction) {
    require_2d(logits, "cross_entropy");
    const std::size_t m = logits.rows(), n = logits.cols();
    if (targets.size() != m) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                         " rows");
    }
    if (!row_mask.empty() && row_mask.size() != m) {
        throw ShapeError("cross_entropy: row mask length mismatch");
    }
    auto lv = logits.data();
    std::vector<double> probs(m * n, 0.0);
    std::vector<std::uint8_t> sel(m, 0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!row_mask.empty() && !row_mask[i]) {
            continue;
        }
        if (targets[i] >= n) {
            throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                             std::to_string(n));
        }
        sel[i] = 1;
        ++count;
        const double *row = lv.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            z += std::exp(row[j] - mx);
        }
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] = std::exp(row[j] - lz);
        }
        total -= row[targets[i]] - lz;
    }
    if (count == 0) {
        throw ShapeError("cross_entropy: no rows selected");
    }
    const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
    std::vector<std::size_t> tv(targets.begin(), targets.end());
    return Tensor::make_result(
        {}, {total * norm}, "cross_entropy", {logits},
        [m, n, norm, probs = std::move(probs), sel = std::move(sel), tv = std::move(tv)](Node &self) {
            Node &pl = parent(self, 0);
            if (!pl.requires_grad) {
                return;
            }
            auto &gl = pl.ensure_grad();
            const double g = self.grad[0] * norm;
            for (std::size_t i = 0; i < m; ++i) {
                if (!sel[i]) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    gl[i * n + j] += g * (probs[i * n + j] - (j == tv[i] ? 1.0 : 0.0));
                }
            }
        });
}

Tensor mse(const Tensor &prediction, const Tensor &target) {
    require_same(prediction, target, "mse");
    auto pv = prediction.data();
    auto tv = target.data();
    const double inv = 1.0 / static_cast<double>(pv.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    }
    return Tensor::make_result({}, {acc * inv}, "mse", {prediction, target}, [inv](Node &self) {
        Node &pp = parent(self, 0);
        Node &pt = parent(self, 1);
        const double g = self.grad[0] * 2.0 * inv;
        if (pp.requires_grad) {
            auto &gp = pp.ensure_grad();
            for (std::size_t i = 0; i < gp.size(); ++i) {
                gp[i] += g * (pp.value[i] - pt.value[i]);
            }
        }
        if (pt.requires_grad) {
            auto &gt = pt.ensure_grad();
            for (std::size_t i = 0; i < gt.size(); ++i) {
                gt[i] -= g * (pp.value[i] - pt.value[i]);
            }
        }
    });
}

Tensor concat_rows(const std::vector<Tensor> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const auto &p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != n) {
            throw ShapeError("concat_rows: column count mismatch");
        }
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<std::size_t> sizes;
    for (const auto &p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        sizes.push_back(p.numel());
    }
    return Tensor::make_result({m, n}, std::move(out), "concat_rows", parts, [sizes = std::move(sizes)](Node &self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            Node &pk = parent(self, k);
            if (pk.requires_grad) {
                auto &g = pk.ensure_grad();
                for (std::size_t i = 0; i < sizes[k]; ++i) {
                    g[i] += self.grad[off + i];
                }
            }
            off += sizes[k];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    std::vector<std::size_t> widths;
    for (const auto &p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row count mismatch");
        }
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t c0 = 0;
    for (const auto &p : parts) {
        auto pv = p.data();
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(pv.data() + i * w, w, out.data() + i * n + c0);
        }
        c0 += w;
    }
    return Tensor::make_result({m, n}, std::move(out), "concat_cols", parts,
                               [m, n, widths = std::move(widths)](Node &self) {
                                   std::size_t c = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                       Node &pk = parent(self, k);
                                       const std::size_t w = widths[k];
                                       if (pk.requires_grad) {
                                           auto &g = pk.ensure_grad();
                                           for (std::size_t i = 0; i < m; ++i) {
                                               for (std::size_t j = 0; j < w; ++j) {
                                                   g[i * w + j] += self.grad[i * n + c + j];
                                               }
                                           }
                                       }
                                       c += w;
                                   }
                               });
}

Tensor select_rows(const Tensor &a, std::span<const std::size_t> rows) {
    require_2d(a, "select_rows");
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.data();
    std::vector<double> out(rows.size() * n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m) {
            throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " out of range " + std::to_string(m));
        }
        std::copy_n(av.data() + rows[i] * n, n, out.data() + i * n);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return Tensor::make_result({rows.size(), n}, std::move(out), "select_rows", {a},
                               [n, idx = std::move(idx)](Node &self) {
                                   Node &pa = parent(self, 0);
                                   if (!pa.requires_grad) {
                                       return;
                                   }
                                   auto &g = pa.ensure_grad();
                                   for (std::size_t i = 0; i < idx.size(); ++i) {
                                       for (std::size_t j = 0; j < n; ++j) {
                                           g[idx[i] * n + j] += self.grad[i * n + j];
                                       }
                                   }
                               });
}

Tensor slice_rows(const Tensor &a, std::size_t start, std::size_t count) {
    require_2d(a, "slice_rows");
    if (start + count > a.rows()) {
        throw ShapeError("slice_rows: range exceeds " + std::to_string(a.rows()) + " rows");
    }
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) {
        idx[i] = start + i;
    }
    return select_rows(a, idx);
}

Tensor slice_cols(const Tensor &a, std::size_t start, std::size_t count) {
    require_2d(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (start + count > n) {
        throw ShapeError("slice_cols: range exceeds " + std::to_string(n) + " columns");
    }
    auto av = a.data();
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(av.data() + i * n + start, count, out.data() + i * count);
    }
    return Tensor::make_result({m, count}, std::move(out), "slice_cols", {a}, [m, n, start, count](Node &self) {
        Node &pa = parent(self, 0);
        if (!pa.requires_grad) {
            return;
        }
        auto &g = pa.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                g[i * n + start + j] += self.grad[i * count + j];
            }
        }
    });
}

Tensor repeat_rows(const Tensor &a, std::size_t times) {
    require_2d(a, "repeat_rows");
    if (times == 0) {
        throw ShapeError("repeat_rows: times must be positive");
    }
    std::vector<std::size_t> idx;
    idx.reserve(a.rows() * times);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t r = 0; r < times; ++r) {
            idx.push_back(i);
        }
    }
    return select_rows(a, idx);
}

Tensor reshape(const Tensor &a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a}, [](Node &self) {
        Node &pa = parent(self, 0);
        if (!pa.requires_grad) {
            return;
        }
        auto &g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor stop_gradient(const Tensor &a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    return Tensor::make_result(a.shape(), std::move(out), "stop_gradient", {}, nullptr);
}

} // namespace jvtoy
