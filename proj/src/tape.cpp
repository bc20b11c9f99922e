#include "squat/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace squat {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

double gelu_tanh(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_tanh_deriv(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    double t = std::tanh(u);
    double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

NodeId Tape::push(Tensor value, std::vector<NodeId> parents,
                  std::function<void(Tape&, NodeId)> backward) {
    Node n;
    n.requires_grad = false;
    for (NodeId p : parents) {
        if (p >= 0 && nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    }
    n.grad.assign(value.size(), 0.0);
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::invalid_argument("node id " + std::to_string(id) + " is not on this tape");
}

std::vector<double>& Tape::grad_buf(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

const Tensor& Tape::value(NodeId id) const {
    check(id);
    return nodes_[static_cast<std::size_t>(id)].value;
}

const std::vector<double>& Tape::grad(NodeId id) const {
    check(id);
    return nodes_[static_cast<std::size_t>(id)].grad;
}

bool Tape::requires_grad(NodeId id) const {
    check(id);
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
}

NodeId Tape::leaf(const Tensor& t) {
    Node n;
    n.value = t;
    n.requires_grad = t.requires_grad;
    n.grad.assign(t.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::constant(Tensor t) {
    t.requires_grad = false;
    return leaf(t);
}

NodeId Tape::add(NodeId a, NodeId b) {
    check(a);
    check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    bool broadcast = false;
    if (va.shape != vb.shape) {
        // b broadcast over leading axes: b.shape must be a suffix of a.shape
        require(vb.rank() < va.rank() &&
                    std::equal(vb.shape.begin(), vb.shape.end(), va.shape.end() - vb.rank()),
                "add: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
        broadcast = true;
    }
    Tensor out = va;
    out.requires_grad = false;
    std::size_t nb = vb.size() == 0 ? 1 : vb.size();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] + vb.data[i % nb];
    (void)broadcast;
    return push(std::move(out), {a, b}, [a, b, nb](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        auto& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i % nb] += g[i];
        }
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    check(a);
    check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.shape == vb.shape,
            "sub: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
    Tensor out = va;
    out.requires_grad = false;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] - vb.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        auto& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

NodeId Tape::mul(NodeId a, NodeId b) {
    check(a);
    check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.shape == vb.shape,
            "mul: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
    Tensor out = va;
    out.requires_grad = false;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& va = t.value(a).data;
        const auto& vb = t.value(b).data;
        auto& ga = t.grad_buf(a);
        auto& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * vb[i];
            gb[i] += g[i] * va[i];
        }
    });
}

NodeId Tape::scale(NodeId a, double c) {
    check(a);
    Tensor out = value(a);
    out.requires_grad = false;
    for (double& v : out.data) v *= c;
    return push(std::move(out), {a}, [a, c](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

NodeId Tape::add_offset(NodeId a, std::vector<double> offset) {
    check(a);
    const Tensor& va = value(a);
    require(offset.size() == va.size(), "add_offset: offset size " + std::to_string(offset.size()) +
                                            " vs tensor " + shape_str(va.shape));
    Tensor out = va;
    out.requires_grad = false;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += offset[i];
    return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    check(a);
    check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(vb.rank() == 2 && (va.rank() == 2 || va.rank() == 3),
            "matmul: unsupported shapes " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    std::size_t K = vb.shape[0], N = vb.shape[1];
    require(va.shape.back() == K,
            "matmul: inner dim mismatch " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    std::size_t B = va.rank() == 3 ? va.shape[0] : 1;
    std::size_t M = va.rank() == 3 ? va.shape[1] : va.shape[0];
    std::vector<std::size_t> oshape =
        va.rank() == 3 ? std::vector<std::size_t>{B, M, N} : std::vector<std::size_t>{M, N};
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t bi = 0; bi < B; ++bi) {
        const double* pa = va.data.data() + bi * M * K;
        double* po = out.data.data() + bi * M * N;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                double av = pa[i * K + k];
                if (av == 0.0) continue;
                const double* pb = vb.data.data() + k * N;
                for (std::size_t j = 0; j < N; ++j) po[i * N + j] += av * pb[j];
            }
    }
    return push(std::move(out), {a, b}, [a, b, B, M, K, N](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& va = t.value(a).data;
        const auto& vb = t.value(b).data;
        auto& ga = t.grad_buf(a);
        auto& gb = t.grad_buf(b);
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* pg = g.data() + bi * M * N;
            const double* pa = va.data() + bi * M * K;
            double* pga = ga.data() + bi * M * K;
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    const double* pb = vb.data() + k * N;
                    const double* pgr = pg + i * N;
                    for (std::size_t j = 0; j < N; ++j) acc += pgr[j] * pb[j];
                    pga[i * K + k] += acc;
                    double av = pa[i * K + k];
                    if (av != 0.0) {
                        double* pgb = gb.data() + k * N;
                        for (std::size_t j = 0; j < N; ++j) pgb[j] += av * pgr[j];
                    }
                }
            }
        }
    });
}

NodeId Tape::bmm(NodeId a, NodeId b) {
    check(a);
    check(b);
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.rank() == 3 && vb.rank() == 3 && va.shape[0] == vb.shape[0] &&
                va.shape[2] == vb.shape[1],
            "bmm: shape mismatch " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    std::size_t B = va.shape[0], M = va.shape[1], K = va.shape[2], P = vb.shape[2];
    Tensor out = Tensor::zeros({B, M, P});
    for (std::size_t bi = 0; bi < B; ++bi) {
        const double* pa = va.data.data() + bi * M * K;
        const double* pb = vb.data.data() + bi * K * P;
        double* po = out.data.data() + bi * M * P;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                double av = pa[i * K + k];
                for (std::size_t j = 0; j < P; ++j) po[i * P + j] += av * pb[k * P + j];
            }
    }
    return push(std::move(out), {a, b}, [a, b, B, M, K, P](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& va = t.value(a).data;
        const auto& vb = t.value(b).data;
        auto& ga = t.grad_buf(a);
        auto& gb = t.grad_buf(b);
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* pg = g.data() + bi * M * P;
            const double* pa = va.data() + bi * M * K;
            const double* pb = vb.data() + bi * K * P;
            double* pga = ga.data() + bi * M * K;
            double* pgb = gb.data() + bi * K * P;
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < P; ++j) acc += pg[i * P + j] * pb[k * P + j];
                    pga[i * K + k] += acc;
                    double av = pa[i * K + k];
                    for (std::size_t j = 0; j < P; ++j) pgb[k * P + j] += av * pg[i * P + j];
                }
        }
    });
}

NodeId Tape::transpose_last2(NodeId a) {
    check(a);
    const Tensor& va = value(a);
    require(va.rank() >= 2, "transpose_last2: rank must be >= 2, got " + shape_str(va.shape));
    std::size_t R = va.shape[va.rank() - 2], C = va.shape[va.rank() - 1];
    std::size_t B = va.size() / (R * C);
    std::vector<std::size_t> oshape = va.shape;
    std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j)
                out.data[bi * R * C + j * R + i] = va.data[bi * R * C + i * C + j];
    return push(std::move(out), {a}, [a, B, R, C](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j)
                    ga[bi * R * C + i * C + j] += g[bi * R * C + j * R + i];
    });
}

NodeId Tape::reshape(NodeId a, std::vector<std::size_t> shape) {
    check(a);
    const Tensor& va = value(a);
    require(shape_numel(shape) == va.size(),
            "reshape: " + shape_str(va.shape) + " -> " + shape_str(shape) + " changes element count");
    Tensor out(std::move(shape), va.data);
    return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

NodeId Tape::slice_last(NodeId a, std::size_t start, std::size_t len) {
    check(a);
    const Tensor& va = value(a);
    require(va.rank() >= 1, "slice_last: rank 0 tensor");
    std::size_t D = va.shape.back();
    require(start + len <= D, "slice_last: range [" + std::to_string(start) + "," +
                                  std::to_string(start + len) + ") exceeds last dim " +
                                  std::to_string(D));
    std::size_t rows = va.size() / D;
    std::vector<std::size_t> oshape = va.shape;
    oshape.back() = len;
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) out.data[r * len + j] = va.data[r * D + start + j];
    return push(std::move(out), {a}, [a, start, len, D, rows](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < len; ++j) ga[r * D + start + j] += g[r * len + j];
    });
}

NodeId Tape::concat_last(const std::vector<NodeId>& parts) {
    require(!parts.empty(), "concat_last: no inputs");
    for (NodeId p : parts) check(p);
    const Tensor& first = value(parts[0]);
    std::size_t D = 0;
    std::vector<std::size_t> lens;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        require(v.rank() == first.rank() &&
                    std::equal(v.shape.begin(), v.shape.end() - 1, first.shape.begin()),
                "concat_last: leading shape mismatch " + shape_str(first.shape) + " vs " +
                    shape_str(v.shape));
        lens.push_back(v.shape.back());
        D += v.shape.back();
    }
    std::size_t rows = first.size() / first.shape.back();
    std::vector<std::size_t> oshape = first.shape;
    oshape.back() = D;
    Tensor out = Tensor::zeros(oshape);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& v = value(parts[pi]);
        std::size_t L = lens[pi];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < L; ++j) out.data[r * D + off + j] = v.data[r * L + j];
        off += L;
    }
    std::vector<NodeId> ps = parts;
    return push(std::move(out), ps, [ps, lens, D, rows](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
            auto& gp = t.grad_buf(ps[pi]);
            std::size_t L = lens[pi];
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < L; ++j) gp[r * L + j] += g[r * D + off + j];
            off += L;
        }
    });
}

NodeId Tape::relu(NodeId a) {
    check(a);
    Tensor out = value(a);
    out.requires_grad = false;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& va = t.value(a).data;
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (va[i] > 0.0) ga[i] += g[i];
    });
}

NodeId Tape::gelu(NodeId a) {
    check(a);
    Tensor out = value(a);
    out.requires_grad = false;
    for (double& v : out.data) v = gelu_tanh(v);
    return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& va = t.value(a).data;
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_tanh_deriv(va[i]);
    });
}

NodeId Tape::softmax(NodeId a) {
    check(a);
    const Tensor& va = value(a);
    require(va.rank() >= 1, "softmax: rank 0 tensor");
    std::size_t D = va.shape.back();
    std::size_t rows = va.size() / D;
    Tensor out = va;
    out.requires_grad = false;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = out.data.data() + r * D;
        double m = *std::max_element(p, p + D);
        double sum = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            p[j] = std::exp(p[j] - m);
            sum += p[j];
        }
        for (std::size_t j = 0; j < D; ++j) p[j] /= sum;
    }
    return push(std::move(out), {a}, [a, rows, D](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& y = t.value(self).data;
        auto& ga = t.grad_buf(a);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += g[r * D + j] * y[r * D + j];
            for (std::size_t j = 0; j < D; ++j)
                ga[r * D + j] += y[r * D + j] * (g[r * D + j] - dot);
        }
    });
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    check(x);
    check(gamma);
    check(beta);
    const Tensor& vx = value(x);
    const Tensor& vg = value(gamma);
    const Tensor& vb = value(beta);
    require(vx.rank() >= 1, "layer_norm: rank 0 input");
    std::size_t D = vx.shape.back();
    require(vg.shape == std::vector<std::size_t>{D} && vb.shape == std::vector<std::size_t>{D},
            "layer_norm: gamma/beta must be [" + std::to_string(D) + "], got " +
                shape_str(vg.shape) + " / " + shape_str(vb.shape));
    std::size_t rows = vx.size() / D;
    Tensor out = Tensor::zeros(vx.shape);
    // cache normalized values and inverse stddev per row for backward
    auto xhat = std::make_shared<std::vector<double>>(vx.size());
    auto istd = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = vx.data.data() + r * D;
        double mu = 0.0;
        for (std::size_t j = 0; j < D; ++j) mu += p[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) var += (p[j] - mu) * (p[j] - mu);
        var /= static_cast<double>(D);
        double is = 1.0 / std::sqrt(var + eps);
        (*istd)[r] = is;
        for (std::size_t j = 0; j < D; ++j) {
            double xh = (p[j] - mu) * is;
            (*xhat)[r * D + j] = xh;
            out.data[r * D + j] = xh * vg.data[j] + vb.data[j];
        }
    }
    return push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, rows, D, xhat, istd](Tape& t, NodeId self) {
                    const auto& g = t.grad_buf(self);
                    const auto& vg = t.value(gamma).data;
                    auto& gx = t.grad_buf(x);
                    auto& gg = t.grad_buf(gamma);
                    auto& gb = t.grad_buf(beta);
                    for (std::size_t r = 0; r < rows; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < D; ++j) {
                            double dxh = g[r * D + j] * vg[j];
                            m1 += dxh;
                            m2 += dxh * (*xhat)[r * D + j];
                        }
                        m1 /= static_cast<double>(D);
                        m2 /= static_cast<double>(D);
                        for (std::size_t j = 0; j < D; ++j) {
                            double dxh = g[r * D + j] * vg[j];
                            gx[r * D + j] += (*istd)[r] * (dxh - m1 - (*xhat)[r * D + j] * m2);
                            gg[j] += g[r * D + j] * (*xhat)[r * D + j];
                            gb[j] += g[r * D + j];
                        }
                    }
                });
}

NodeId Tape::mean_all(NodeId a) {
    check(a);
    const Tensor& va = value(a);
    require(va.size() > 0, "mean_all: empty tensor");
    double s = 0.0;
    for (double v : va.data) s += v;
    std::size_t n = va.size();
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    return push(std::move(out), {a}, [a, n](Tape& t, NodeId self) {
        double g = t.grad_buf(self)[0] / static_cast<double>(n);
        auto& ga = t.grad_buf(a);
        for (double& v : ga) v += g;
    });
}

NodeId Tape::mean_axis1(NodeId a) {
    check(a);
    const Tensor& va = value(a);
    require(va.rank() == 3, "mean_axis1: expects rank 3, got " + shape_str(va.shape));
    std::size_t B = va.shape[0], T = va.shape[1], D = va.shape[2];
    Tensor out = Tensor::zeros({B, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t tt = 0; tt < T; ++tt)
            for (std::size_t j = 0; j < D; ++j)
                out.data[b * D + j] += va.data[b * T * D + tt * D + j] / static_cast<double>(T);
    return push(std::move(out), {a}, [a, B, T, D](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        auto& ga = t.grad_buf(a);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t tt = 0; tt < T; ++tt)
                for (std::size_t j = 0; j < D; ++j)
                    ga[b * T * D + tt * D + j] += g[b * D + j] / static_cast<double>(T);
    });
}

NodeId Tape::l2_norm(NodeId a) {
    check(a);
    const Tensor& va = value(a);
    double ss = 0.0;
    for (double v : va.data) ss += v * v;
    double norm = std::sqrt(ss);
    Tensor out = Tensor::scalar(norm);
    return push(std::move(out), {a}, [a, norm](Tape& t, NodeId self) {
        if (norm == 0.0) return;
        double g = t.grad_buf(self)[0];
        const auto& va = t.value(a).data;
        auto& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g * va[i] / norm;
    });
}

NodeId Tape::cross_entropy_with_logits(NodeId logits, const std::vector<int>& labels) {
    check(logits);
    const Tensor& vl = value(logits);
    require(vl.rank() == 1 || vl.rank() == 2,
            "cross_entropy: logits must be [C] or [B,C], got " + shape_str(vl.shape));
    std::size_t B = vl.rank() == 2 ? vl.shape[0] : 1;
    std::size_t C = vl.shape.back();
    require(labels.size() == B, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(B) + " rows");
    for (std::size_t b = 0; b < B; ++b)
        require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < C,
                "cross_entropy: label " + std::to_string(labels[b]) + " out of range [0," +
                    std::to_string(C) + ")");
    auto probs = std::make_shared<std::vector<double>>(vl.data);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double* p = probs->data() + b * C;
        double m = *std::max_element(p, p + C);
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            p[j] = std::exp(p[j] - m);
            sum += p[j];
        }
        for (std::size_t j = 0; j < C; ++j) p[j] /= sum;
        loss -= std::log(p[static_cast<std::size_t>(labels[b])]);
    }
    loss /= static_cast<double>(B);
    Tensor out = Tensor::scalar(loss);
    std::vector<int> lab = labels;
    return push(std::move(out), {logits}, [logits, probs, lab, B, C](Tape& t, NodeId self) {
        double g = t.grad_buf(self)[0] / static_cast<double>(B);
        auto& gl = t.grad_buf(logits);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < C; ++j) {
                double y = (static_cast<std::size_t>(lab[b]) == j) ? 1.0 : 0.0;
                gl[b * C + j] += g * ((*probs)[b * C + j] - y);
            }
    });
}

NodeId Tape::outer_embed(NodeId x, NodeId w, NodeId bias) {
    check(x);
    check(w);
    check(bias);
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(bias);
    require(vx.rank() == 2 && vw.rank() == 2 && vb.shape == vw.shape &&
                vx.shape[1] == vw.shape[0],
            "outer_embed: shapes " + shape_str(vx.shape) + ", " + shape_str(vw.shape) + ", " +
                shape_str(vb.shape) + " do not conform");
    std::size_t B = vx.shape[0], T = vw.shape[0], D = vw.shape[1];
    Tensor out = Tensor::zeros({B, T, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < T; ++j)
            for (std::size_t k = 0; k < D; ++k)
                out.data[b * T * D + j * D + k] = vx.data[b * T + j] * vw.data[j * D + k] +
                                                  vb.data[j * D + k];
    return push(std::move(out), {x, w, bias}, [x, w, bias, B, T, D](Tape& t, NodeId self) {
        const auto& g = t.grad_buf(self);
        const auto& vx = t.value(x).data;
        const auto& vw = t.value(w).data;
        auto& gx = t.grad_buf(x);
        auto& gw = t.grad_buf(w);
        auto& gb = t.grad_buf(bias);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < T; ++j)
                for (std::size_t k = 0; k < D; ++k) {
                    double gv = g[b * T * D + j * D + k];
                    gx[b * T + j] += gv * vw[j * D + k];
                    gw[j * D + k] += gv * vx[b * T + j];
                    gb[j * D + k] += gv;
                }
    });
}

NodeId Tape::custom(const CustomForward& forward_fn, const CustomBackward& backward_fn,
                    const std::vector<NodeId>& inputs) {
    require(!inputs.empty(), "custom: no inputs");
    std::vector<Tensor> vals;
    vals.reserve(inputs.size());
    for (NodeId id : inputs) {
        check(id);
        vals.push_back(value(id));
    }
    Tensor out = forward_fn(vals);
    out.requires_grad = false;
    // dry-run shape check: backward must yield one gradient per input, shapes matching
    Tensor probe = Tensor::zeros(out.shape);
    std::vector<Tensor> dry = backward_fn(probe, vals);
    require(dry.size() == inputs.size(), "custom: backward returned " + std::to_string(dry.size()) +
                                             " gradients for " + std::to_string(inputs.size()) +
                                             " inputs");
    for (std::size_t i = 0; i < dry.size(); ++i)
        require(dry[i].shape == vals[i].shape,
                "custom: backward gradient " + std::to_string(i) + " has shape " +
                    shape_str(dry[i].shape) + ", input has " + shape_str(vals[i].shape));
    std::vector<NodeId> ins = inputs;
    CustomBackward bwd = backward_fn;
    return push(std::move(out), ins, [ins, bwd](Tape& t, NodeId self) {
        Tensor up = t.value(self);
        up.data = t.grad_buf(self);
        std::vector<Tensor> vals;
        vals.reserve(ins.size());
        for (NodeId id : ins) vals.push_back(t.value(id));
        std::vector<Tensor> gs = bwd(up, vals);
        for (std::size_t i = 0; i < ins.size(); ++i) {
            auto& gin = t.grad_buf(ins[i]);
            for (std::size_t j = 0; j < gin.size(); ++j) gin[j] += gs[i].data[j];
        }
    });
}

void Tape::backward(NodeId loss) {
    check(loss);
    if (backward_done_)
        throw std::logic_error("backward already run on this tape; reset() before reuse");
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (!ln.value.is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(ln.value.shape));
    if (!ln.requires_grad)
        throw std::invalid_argument("backward: loss is detached from all differentiable leaves");
    backward_done_ = true;
    ln.grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.requires_grad && n.backward) n.backward(*this, id);
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

}  // namespace squat
