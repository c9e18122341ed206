// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#include "occfield/diffcore/ops.hpp"

#include "occfield/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

namespace occ::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using detail::Node;
using Backward = std::function<void(Node&)>;

std::int64_t last_extent(const Tensor& t) { return t.shape().back(); }
std::int64_t row_count(const Tensor& t) { return t.numel() / last_extent(t); }

void require_defined(std::string_view op, std::initializer_list<const Tensor*> inputs) {
    for (const auto* t : inputs) {
        if (!t->defined()) {
            throw ContractError(std::string(op) + ": undefined input tensor");
        }
    }
}

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(t.shape()));
    }
}

Tensor make_result(Shape shape, std::vector<double> values, const char* op, std::vector<Tensor> inputs,
                   Backward backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) {
            needs_grad = needs_grad || in.requires_grad();
        }
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) {
            node->parents.push_back(in.node());
        }
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
std::vector<double>& grad_of(Node& self, std::size_t i) { return self.parents[i]->grad; }
const std::vector<double>& data_of(const Node& self, std::size_t i) { return self.parents[i]->data; }

template <typename F>
Tensor unary_elementwise(const Tensor& a, const char* op, F&& fn, Backward backward_fn) {
    require_defined(op, {&a});
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) {
        v = fn(v);
    }
    return make_result(a.shape(), std::move(out), op, {a}, std::move(backward_fn));
}

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined("matmul", {&a, &b});
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        shape_error("matmul", a, b);
    }
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
        ConstMap g(self.grad.data(), m, n);
        if (wants(self, 0)) {
            MutMap(grad_of(self, 0).data(), m, k).noalias() += g * ConstMap(data_of(self, 1).data(), k, n).transpose();
        }
        if (wants(self, 1)) {
            MutMap(grad_of(self, 1).data(), k, n).noalias() += ConstMap(data_of(self, 0).data(), m, k).transpose() * g;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined("add", {&a, &b});
    const auto ad = a.data();
    const auto bd = b.data();
    if (a.shape() == b.shape()) {
        std::vector<double> out(ad.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = ad[i] + bd[i];
        }
        return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
            for (std::size_t p = 0; p < 2; ++p) {
                if (wants(self, p)) {
                    auto& g = grad_of(self, p);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += self.grad[i];
                    }
                }
            }
        });
    }
    const auto cols = last_extent(a);
    if (b.numel() != cols) {
        shape_error("add", a, b);
    }
    const auto rows = row_count(a);
    std::vector<double> out(ad.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            out[r * cols + c] = ad[r * cols + c] + bd[c];
        }
    }
    return make_result(a.shape(), std::move(out), "add", {a, b}, [rows, cols](Node& self) {
        if (wants(self, 0)) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (wants(self, 1)) {
            auto& g = grad_of(self, 1);
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t c = 0; c < cols; ++c) {
                    g[c] += self.grad[r * cols + c];
                }
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined("mul", {&a, &b});
    if (a.shape() != b.shape()) {
        shape_error("mul", a, b);
    }
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = ad[i] * bd[i];
    }
    return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (wants(self, p)) {
                auto& g = grad_of(self, p);
                const auto& other = data_of(self, 1 - p);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i] * other[i];
                }
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary_elementwise(
        a, "scale", [factor](double v) { return v * factor; },
        [factor](Node& self) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += factor * self.grad[i];
            }
        });
}

Tensor softmax_lastdim(const Tensor& a) {
    require_defined("softmax_lastdim", {&a});
    const auto cols = last_extent(a);
    const auto rows = row_count(a);
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * cols;
        const double peak = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - peak);
            total += row[c];
        }
        for (std::int64_t c = 0; c < cols; ++c) {
            row[c] /= total;
        }
    }
    return make_result(a.shape(), std::move(out), "softmax_lastdim", {a}, [rows, cols](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* dy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) {
                dot += dy[c] * y[c];
            }
            for (std::int64_t c = 0; c < cols; ++c) {
                g[r * cols + c] += y[c] * (dy[c] - dot);
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_defined("layer_norm", {&x, &gamma, &beta});
    const auto cols = last_extent(x);
    if (gamma.numel() != cols) {
        shape_error("layer_norm", x, gamma);
    }
    if (beta.numel() != cols) {
        shape_error("layer_norm", x, beta);
    }
    const auto rows = row_count(x);
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    std::vector<double> out(xd.size());
    // Saved per row: normalized values and 1/sigma.
    auto xhat = std::make_shared<std::vector<double>>(xd.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * cols;
        double mu = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            var += (row[c] - mu) * (row[c] - mu);
        }
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::int64_t c = 0; c < cols; ++c) {
            const double h = (row[c] - mu) * is;
            (*xhat)[r * cols + c] = h;
            out[r * cols + c] = gd[c] * h + bd[c];
        }
    }
    return make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                       [rows, cols, xhat, inv_std](Node& self) {
                           const auto& gd = data_of(self, 1);
                           const auto n = static_cast<double>(cols);
                           for (std::int64_t r = 0; r < rows; ++r) {
                               const double* dy = self.grad.data() + r * cols;
                               const double* h = xhat->data() + r * cols;
                               if (wants(self, 0)) {
                                   double sum_d = 0.0, sum_dh = 0.0;
                                   for (std::int64_t c = 0; c < cols; ++c) {
                                       const double d = dy[c] * gd[c];
                                       sum_d += d;
                                       sum_dh += d * h[c];
                                   }
                                   auto& gx = grad_of(self, 0);
                                   const double is = (*inv_std)[r];
                                   for (std::int64_t c = 0; c < cols; ++c) {
                                       const double d = dy[c] * gd[c];
                                       gx[r * cols + c] += is * (d - sum_d / n - h[c] * sum_dh / n);
                                   }
                               }
                               if (wants(self, 1)) {
                                   auto& gg = grad_of(self, 1);
                                   for (std::int64_t c = 0; c < cols; ++c) {
                                       gg[c] += dy[c] * h[c];
                                   }
                               }
                               if (wants(self, 2)) {
                                   auto& gb = grad_of(self, 2);
                                   for (std::int64_t c = 0; c < cols; ++c) {
                                       gb[c] += dy[c];
                                   }
                               }
                           }
                       });
}

Tensor gelu(const Tensor& a) {
    return unary_elementwise(
        a, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); },
        [](Node& self) {
            const auto& x = data_of(self, 0);
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
                g[i] += self.grad[i] * (cdf + x[i] * std_normal_pdf(x[i]));
            }
        });
}

Tensor relu(const Tensor& a) {
    return unary_elementwise(
        a, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](Node& self) {
            const auto& x = data_of(self, 0);
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) {
                    g[i] += self.grad[i];
                }
            }
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_elementwise(
        a, "sigmoid",
        [](double v) {
            if (v >= 0.0) {
                return 1.0 / (1.0 + std::exp(-v));
            }
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](Node& self) {
            auto& g = grad_of(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = self.data[i];
                g[i] += self.grad[i] * y * (1.0 - y);
            }
        });
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw ContractError("concat_lastdim: no inputs");
    }
    for (const auto& p : parts) {
        require_defined("concat_lastdim", {&p});
    }
    const auto rows = row_count(parts[0]);
    std::vector<std::int64_t> widths;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (row_count(p) != rows || p.rank() != parts[0].rank()) {
            shape_error("concat_lastdim", parts[0], p);
        }
        widths.push_back(last_extent(p));
        total += widths.back();
    }
    std::vector<double> out(static_cast<std::size_t>(rows * total));
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto d = parts[k].data();
        const auto w = widths[k];
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy_n(d.data() + r * w, w, out.data() + r * total + offset);
        }
        offset += w;
    }
    Shape shape = parts[0].shape();
    shape.back() = total;
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result(std::move(shape), std::move(out), "concat_lastdim", std::move(inputs),
                       [rows, total, widths](Node& self) {
                           std::int64_t off = 0;
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                               const auto w = widths[k];
                               if (wants(self, k)) {
                                   auto& g = grad_of(self, k);
                                   for (std::int64_t r = 0; r < rows; ++r) {
                                       for (std::int64_t c = 0; c < w; ++c) {
                                           g[r * w + c] += self.grad[r * total + off + c];
                                       }
                                   }
                               }
                               off += w;
                           }
                       });
}

namespace {

struct BilinearTap {
    std::int64_t x0, y0;
    double wx, wy; // fractional offsets toward x0+1, y0+1
    double sx, sy; // d(index)/d(coord)
};

BilinearTap bilinear_tap(double x, double y, std::int64_t h, std::int64_t w) {
    BilinearTap tap{};
    const double fx = (x + 1.0) * 0.5 * static_cast<double>(w - 1);
    const double fy = (y + 1.0) * 0.5 * static_cast<double>(h - 1);
    tap.x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fx)), 0, std::max<std::int64_t>(w - 2, 0));
    tap.y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fy)), 0, std::max<std::int64_t>(h - 2, 0));
    tap.wx = w > 1 ? fx - static_cast<double>(tap.x0) : 0.0;
    tap.wy = h > 1 ? fy - static_cast<double>(tap.y0) : 0.0;
    tap.sx = 0.5 * static_cast<double>(w - 1);
    tap.sy = 0.5 * static_cast<double>(h - 1);
    return tap;
}

} // namespace

Tensor bilinear_sample_2d(const Tensor& grid, const Tensor& coords) {
    require_defined("bilinear_sample_2d", {&grid, &coords});
    require_rank("bilinear_sample_2d", grid, 3);
    if (coords.rank() != 2 || coords.dim(1) != 2) {
        shape_error("bilinear_sample_2d", grid, coords);
    }
    const auto channels = grid.dim(0), h = grid.dim(1), w = grid.dim(2);
    const auto n = coords.dim(0);
    const auto cd = coords.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < 2; ++k) {
            const double v = cd[i * 2 + k];
            if (!(v >= -1.0 && v <= 1.0)) {
                throw OutOfRangeError("bilinear_sample_2d: coordinate " + std::to_string(v) + " at row " +
                                      std::to_string(i) + " outside [-1,1]");
            }
        }
    }
    const auto gd = grid.data();
    const auto plane = h * w;
    const std::int64_t dx = w > 1 ? 1 : 0;
    const std::int64_t dy = h > 1 ? w : 0;
    std::vector<double> out(static_cast<std::size_t>(n * channels));
    for (std::int64_t i = 0; i < n; ++i) {
        const auto t = bilinear_tap(cd[i * 2], cd[i * 2 + 1], h, w);
        const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
        const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
        const std::int64_t base = t.y0 * w + t.x0;
        for (std::int64_t c = 0; c < channels; ++c) {
            const double* p = gd.data() + c * plane + base;
            out[i * channels + c] = w00 * p[0] + w01 * p[dx] + w10 * p[dy] + w11 * p[dy + dx];
        }
    }
    return make_result({n, channels}, std::move(out), "bilinear_sample_2d", {grid, coords},
                       [n, channels, h, w, plane, dx, dy](Node& self) {
                           const auto& gd = data_of(self, 0);
                           const auto& cd = data_of(self, 1);
                           for (std::int64_t i = 0; i < n; ++i) {
                               const auto t = bilinear_tap(cd[i * 2], cd[i * 2 + 1], h, w);
                               const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
                               const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
                               const std::int64_t base = t.y0 * w + t.x0;
                               const double* dout = self.grad.data() + i * channels;
                               if (wants(self, 0)) {
                                   auto& gg = grad_of(self, 0);
                                   for (std::int64_t c = 0; c < channels; ++c) {
                                       double* p = gg.data() + c * plane + base;
                                       p[0] += w00 * dout[c];
                                       p[dx] += w01 * dout[c];
                                       p[dy] += w10 * dout[c];
                                       p[dy + dx] += w11 * dout[c];
                                   }
                               }
                               if (wants(self, 1)) {
                                   double gx = 0.0, gy = 0.0;
                                   for (std::int64_t c = 0; c < channels; ++c) {
                                       const double* p = gd.data() + c * plane + base;
                                       const double v00 = p[0], v01 = p[dx], v10 = p[dy], v11 = p[dy + dx];
                                       gx += dout[c] * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                                       gy += dout[c] * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                                   }
                                   auto& gc = grad_of(self, 1);
                                   gc[i * 2] += gx * (w > 1 ? t.sx : 0.0);
                                   gc[i * 2 + 1] += gy * (h > 1 ? t.sy : 0.0);
                               }
                           }
                       });
}

Tensor transpose_2d(const Tensor& a) {
    require_defined("transpose_2d", {&a});
    require_rank("transpose_2d", a, 2);
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
    return make_result({n, m}, std::move(out), "transpose_2d", {a}, [m, n](Node& self) {
        MutMap(grad_of(self, 0).data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
    });
}

Tensor mean(const Tensor& a) {
    require_defined("mean", {&a});
    const auto d = a.data();
    double total = 0.0;
    for (double v : d) {
        total += v;
    }
    const auto count = static_cast<double>(d.size());
    return make_result({1}, {total / count}, "mean", {a}, [count](Node& self) {
        auto& g = grad_of(self, 0);
        const double share = self.grad[0] / count;
        for (auto& v : g) {
            v += share;
        }
    });
}

Tensor bce(const Tensor& logits, const Tensor& labels) {
    require_defined("bce", {&logits, &labels});
    if (logits.numel() != labels.numel()) {
        shape_error("bce", logits, labels);
    }
    const auto l = logits.data();
    const auto y = labels.data();
    double total = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        // softplus(l) - y*l == -(y log s(l) + (1-y) log(1-s(l)))
        total += std::max(l[i], 0.0) - l[i] * y[i] + std::log1p(std::exp(-std::abs(l[i])));
    }
    const auto count = static_cast<double>(l.size());
    return make_result({1}, {total / count}, "bce", {logits, labels}, [count](Node& self) {
        if (!wants(self, 0)) {
            return;
        }
        const auto& l = data_of(self, 0);
        const auto& y = data_of(self, 1);
        auto& g = grad_of(self, 0);
        const double share = self.grad[0] / count;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = l[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-l[i])) : std::exp(l[i]) / (1.0 + std::exp(l[i]));
            g[i] += share * (s - y[i]);
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined("reshape", {&a});
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    for (auto e : shape) {
        if (e <= 0) {
            throw DimensionError("reshape: non-positive extent in " + shape_str(shape));
        }
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), "reshape", {a}, [](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> rows) {
    require_defined("gather_rows", {&a});
    require_rank("gather_rows", a, 2);
    const auto m = a.dim(0), n = a.dim(1);
    auto index = std::make_shared<std::vector<std::int64_t>>(rows.begin(), rows.end());
    if (index->empty()) {
        throw DimensionError("gather_rows: empty index list");
    }
    const auto ad = a.data();
    std::vector<double> out(index->size() * static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < index->size(); ++i) {
        const auto r = (*index)[i];
        if (r < -1 || r >= m) {
            throw OutOfRangeError("gather_rows: row " + std::to_string(r) + " outside [-1, " + std::to_string(m) + ")");
        }
        if (r >= 0) {
            std::copy_n(ad.data() + r * n, n, out.data() + static_cast<std::int64_t>(i) * n);
        }
    }
    const auto out_rows = static_cast<std::int64_t>(index->size());
    return make_result({out_rows, n}, std::move(out), "gather_rows", {a}, [index, n](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < index->size(); ++i) {
            const auto r = (*index)[i];
            if (r < 0) {
                continue;
            }
            const double* src = self.grad.data() + static_cast<std::int64_t>(i) * n;
            double* dst = g.data() + r * n;
            for (std::int64_t c = 0; c < n; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

Tensor slice_lastdim(const Tensor& a, std::int64_t begin, std::int64_t end) {
    require_defined("slice_lastdim", {&a});
    const auto cols = last_extent(a);
    if (begin < 0 || end > cols || begin >= end) {
        throw DimensionError("slice_lastdim: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for shape " + shape_str(a.shape()));
    }
    const auto rows = row_count(a);
    const auto width = end - begin;
    const auto ad = a.data();
    std::vector<double> out(static_cast<std::size_t>(rows * width));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(ad.data() + r * cols + begin, width, out.data() + r * width);
    }
    Shape shape = a.shape();
    shape.back() = width;
    return make_result(std::move(shape), std::move(out), "slice_lastdim", {a}, [rows, cols, begin, width](Node& self) {
        auto& g = grad_of(self, 0);
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < width; ++c) {
                g[r * cols + begin + c] += self.grad[r * width + c];
            }
        }
    });
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::softmax_lastdim: return "softmax_lastdim";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::concat_lastdim: return "concat_lastdim";
    case OpKind::bilinear_sample_2d: return "bilinear_sample_2d";
    case OpKind::transpose_2d: return "transpose_2d";
    case OpKind::mean: return "mean";
    case OpKind::bce: return "bce";
    case OpKind::mul: return "mul";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::slice_lastdim: return "slice_lastdim";
    }
    return "unknown";
}

namespace {

void require_arity(OpKind kind, std::span<const Tensor> inputs, std::size_t n) {
    if (inputs.size() != n) {
        throw ContractError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                            std::to_string(inputs.size()));
    }
}

std::vector<std::int64_t> as_indices(const Tensor& t) {
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(t.numel()));
    for (double v : t.data()) {
        out.push_back(static_cast<std::int64_t>(std::llround(v)));
    }
    return out;
}

} // namespace

Tensor forward_op(OpKind kind, std::span<const Tensor> in) {
    switch (kind) {
    case OpKind::matmul: require_arity(kind, in, 2); return matmul(in[0], in[1]);
    case OpKind::add: require_arity(kind, in, 2); return add(in[0], in[1]);
    case OpKind::mul: require_arity(kind, in, 2); return mul(in[0], in[1]);
    case OpKind::scale: require_arity(kind, in, 2); return scale(in[0], in[1].item());
    case OpKind::softmax_lastdim: require_arity(kind, in, 1); return softmax_lastdim(in[0]);
    case OpKind::layer_norm: require_arity(kind, in, 3); return layer_norm(in[0], in[1], in[2]);
    case OpKind::gelu: require_arity(kind, in, 1); return gelu(in[0]);
    case OpKind::relu: require_arity(kind, in, 1); return relu(in[0]);
    case OpKind::sigmoid: require_arity(kind, in, 1); return sigmoid(in[0]);
    case OpKind::concat_lastdim: return concat_lastdim(in);
    case OpKind::bilinear_sample_2d: require_arity(kind, in, 2); return bilinear_sample_2d(in[0], in[1]);
    case OpKind::transpose_2d: require_arity(kind, in, 1); return transpose_2d(in[0]);
    case OpKind::mean: require_arity(kind, in, 1); return mean(in[0]);
    case OpKind::bce: require_arity(kind, in, 2); return bce(in[0], in[1]);
    case OpKind::reshape: require_arity(kind, in, 2); return reshape(in[0], as_indices(in[1]));
    case OpKind::gather_rows: {
        require_arity(kind, in, 2);
        const auto rows = as_indices(in[1]);
        return gather_rows(in[0], rows);
    }
    case OpKind::slice_lastdim: {
        require_arity(kind, in, 2);
        const auto range = as_indices(in[1]);
        if (range.size() != 2) {
            throw ContractError("slice_lastdim: range tensor must hold [begin, end]");
        }
        return slice_lastdim(in[0], range[0], range[1]);
    }
    }
    throw ContractError("unknown op kind");
}

} // namespace occ::diff
