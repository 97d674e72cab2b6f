#include "lowpass/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "lowpass/spectral.hpp"

namespace lowpass {

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw std::domain_error("Graph::leaf: non-finite input value");
    nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad, {}});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (const auto& v : inputs) {
        if (&v.graph() != this) throw std::invalid_argument("Graph::record: input from another graph");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || requires_grad(v.id());
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var output) {
    if (output.value().size() != 1) {
        throw ShapeError("backward: output of shape " + to_string(output.shape()) +
                         " is not a scalar; pass an explicit seed");
    }
    backward(output, Tensor(output.shape(), 1.0));
}

void Graph::backward(Var output, const Tensor& seed) {
    require_same_shape("backward", output.shape(), seed.shape());
    zero_grad();
    nodes_.at(output.id()).grad = seed;
    for (std::size_t id = output.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.empty() || !n.backward) continue;
        // copy: the callback may append to nodes_ indirectly through accumulate
        const Tensor g = n.grad;
        n.backward(*this, g);
    }
}

Tensor Graph::grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

void Graph::zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor();
}

void Graph::accumulate(Var v, const Tensor& g) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        require_same_shape("accumulate", n.value.shape(), g.shape());
        n.grad = g;
    } else {
        n.grad += g;
    }
}

BatchNormState BatchNormState::identity(std::size_t channels) {
    return BatchNormState{Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Tensor binomial_blur(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("binomial_blur: need at least 2 axes, got " + to_string(x.shape()));
    const std::size_t h = x.shape()[x.rank() - 2], w = x.shape().back();
    const std::size_t planes = x.size() / (h * w);
    static constexpr double taps[3] = {0.25, 0.5, 0.25};
    Tensor tmp(x.shape()), out(x.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data().data() + p * h * w;
        double* t = tmp.data().data() + p * h * w;
        double* dst = out.data().data() + p * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                t[i * w + j] = taps[0] * src[i * w + (j + w - 1) % w] + taps[1] * src[i * w + j] +
                               taps[2] * src[i * w + (j + 1) % w];
            }
        }
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                dst[i * w + j] = taps[0] * t[((i + h - 1) % h) * w + j] + taps[1] * t[i * w + j] +
                                 taps[2] * t[((i + 1) % h) * w + j];
            }
        }
    }
    return out;
}

namespace ops {

Var add(Var a, Var b) {
    require_same_shape("add", a.shape(), b.shape());
    return a.graph().record("add", a.value() + b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
        g.accumulate(a, go);
        g.accumulate(b, go);
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a.shape(), b.shape());
    return a.graph().record("sub", a.value() - b.value(), {a, b}, [a, b](Graph& g, const Tensor& go) {
        g.accumulate(a, go);
        g.accumulate(b, go * -1.0);
    });
}

Var scale(Var a, double s) {
    return a.graph().record("scale", a.value() * s, {a}, [a, s](Graph& g, const Tensor& go) { g.accumulate(a, go * s); });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a.shape(), b.shape());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
        Tensor ga = go, gb = go;
        for (std::size_t i = 0; i < go.size(); ++i) {
            ga[i] *= b.value()[i];
            gb[i] *= a.value()[i];
        }
        g.accumulate(a, ga);
        g.accumulate(b, gb);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.graph().record("sum", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
        g.accumulate(a, Tensor(a.shape(), go.item()));
    });
}

Var sum_squares(Var a) {
    const double s = dot(a.value(), a.value());
    return a.graph().record("sum_squares", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
        g.accumulate(a, a.value() * (2.0 * go.item()));
    });
}

Var l2norm(Var a) {
    const double n = lowpass::l2norm(a.value());
    return a.graph().record("l2norm", Tensor::scalar(n), {a}, [a, n](Graph& g, const Tensor& go) {
        if (n == 0.0) return;
        g.accumulate(a, a.value() * (go.item() / n));
    });
}

Var l2dist(Var a, Var b) { return l2norm(sub(a, b)); }

Var relu(Var x) {
    return x.graph().record("relu", lowpass::relu(x.value()), {x}, [x](Graph& g, const Tensor& go) {
        Tensor gx = go;
        const auto& xv = x.value();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (!(xv[i] > 0.0)) gx[i] = 0.0;
        }
        g.accumulate(x, gx);
    });
}

Var tanh(Var x) {
    Tensor y = x.value();
    for (auto& v : y.data()) v = std::tanh(v);
    const Tensor yc = y;
    return x.graph().record("tanh", std::move(y), {x}, [x, yc](Graph& g, const Tensor& go) {
        Tensor gx = go;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - yc[i] * yc[i];
        g.accumulate(x, gx);
    });
}

Var conv2d(Var x, Var k, std::size_t stride, Padding padding) {
    Tensor out = lowpass::conv2d(x.value(), k.value(), stride, padding);
    return x.graph().record("conv2d", std::move(out), {x, k}, [x, k, stride, padding](Graph& g, const Tensor& go) {
        if (x.requires_grad()) g.accumulate(x, conv2d_adjoint(go, k.value(), x.shape(), stride, padding));
        if (k.requires_grad()) g.accumulate(k, conv2d_kernel_grad(go, x.value(), k.shape(), stride, padding));
    });
}

Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormState& state, BatchNormMode mode) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("batchnorm2d: input must be 4-D, got " + to_string(xs));
    const std::size_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
    if (gamma.value().size() != c) throw ShapeError("batchnorm2d(gamma)", 1, gamma.value().size(), c);
    if (beta.value().size() != c) throw ShapeError("batchnorm2d(beta)", 1, beta.value().size(), c);
    if (state.running_mean.size() != c) throw ShapeError("batchnorm2d(running_mean)", 1, state.running_mean.size(), c);
    if (state.running_var.size() != c) throw ShapeError("batchnorm2d(running_var)", 1, state.running_var.size(), c);

    const auto& xv = x.value();
    std::vector<double> mean(c), inv_std(c);
    if (mode == BatchNormMode::train) {
        const double count = static_cast<double>(b * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t i = 0; i < hw; ++i) m += xv[(n * c + ch) * hw + i];
            }
            m /= count;
            double var = 0.0;
            for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = xv[(n * c + ch) * hw + i] - m;
                    var += d * d;
                }
            }
            var /= count;
            mean[ch] = m;
            inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * m;
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
        }
    }

    Tensor xhat(xs), out(xs);
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (n * c + ch) * hw + i;
                xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
                out[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
            }
        }
    }

    return x.graph().record(
        "batchnorm2d", std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, inv_std, mode, b, c, hw](Graph& g, const Tensor& go) {
            Tensor gg(gamma.shape()), gb(beta.shape()), gx(x.shape());
            const double count = static_cast<double>(b * hw);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_go = 0.0, sum_go_xhat = 0.0;
                for (std::size_t n = 0; n < b; ++n) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t idx = (n * c + ch) * hw + i;
                        sum_go += go[idx];
                        sum_go_xhat += go[idx] * xhat[idx];
                    }
                }
                gg[ch] = sum_go_xhat;
                gb[ch] = sum_go;
                const double gam = gamma.value()[ch];
                for (std::size_t n = 0; n < b; ++n) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t idx = (n * c + ch) * hw + i;
                        if (mode == BatchNormMode::train) {
                            gx[idx] = gam * inv_std[ch] *
                                      (go[idx] - sum_go / count - xhat[idx] * sum_go_xhat / count);
                        } else {
                            gx[idx] = gam * inv_std[ch] * go[idx];
                        }
                    }
                }
            }
            g.accumulate(x, gx);
            g.accumulate(gamma, gg);
            g.accumulate(beta, gb);
        });
}

Var lowpass(Var x, std::size_t u) {
    return x.graph().record("lowpass", lowpass::lowpass(x.value(), u), {x},
                            [x, u](Graph& g, const Tensor& go) { g.accumulate(x, lowpass::lowpass(go, u)); });
}

Var decimate(Var x, std::size_t s) {
    return x.graph().record("decimate", lowpass::decimate(x.value(), s), {x},
                            [x, s](Graph& g, const Tensor& go) { g.accumulate(x, upsample_zero(go, s)); });
}

Var binomial_blur(Var x) {
    return x.graph().record("binomial_blur", lowpass::binomial_blur(x.value()), {x},
                            [x](Graph& g, const Tensor& go) { g.accumulate(x, lowpass::binomial_blur(go)); });
}

Var zero_pad_channels(Var x, std::size_t channels) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("zero_pad_channels: input must be 4-D, got " + to_string(xs));
    if (channels < xs[1]) {
        throw ShapeError("zero_pad_channels: cannot pad " + std::to_string(xs[1]) + " channels down to " +
                         std::to_string(channels));
    }
    const std::size_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
    Tensor out({b, channels, xs[2], xs[3]});
    for (std::size_t n = 0; n < b; ++n) {
        std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>(n * c * hw), c * hw,
                    out.data().begin() + static_cast<std::ptrdiff_t>(n * channels * hw));
    }
    return x.graph().record("zero_pad_channels", std::move(out), {x}, [x, b, c, hw, channels](Graph& g, const Tensor& go) {
        Tensor gx(x.shape());
        for (std::size_t n = 0; n < b; ++n) {
            std::copy_n(go.data().begin() + static_cast<std::ptrdiff_t>(n * channels * hw), c * hw,
                        gx.data().begin() + static_cast<std::ptrdiff_t>(n * c * hw));
        }
        g.accumulate(x, gx);
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.graph().record("reshape", std::move(out), {x},
                            [x](Graph& g, const Tensor& go) { g.accumulate(x, go.reshaped(x.shape())); });
}

Var linear(Var x, Var w, Var b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2) throw ShapeError("linear: expects x[B,F] and w[O,F]");
    if (xs[1] != ws[1]) throw ShapeError("linear", 1, xs[1], ws[1]);
    if (b.value().size() != ws[0]) throw ShapeError("linear(bias)", 0, b.value().size(), ws[0]);
    const std::size_t bn = xs[0], f = xs[1], o = ws[0];
    Tensor out({bn, o});
    for (std::size_t n = 0; n < bn; ++n) {
        for (std::size_t k = 0; k < o; ++k) {
            double acc = b.value()[k];
            for (std::size_t i = 0; i < f; ++i) acc += x.value()[n * f + i] * w.value()[k * f + i];
            out[n * o + k] = acc;
        }
    }
    return x.graph().record("linear", std::move(out), {x, w, b}, [x, w, b, bn, f, o](Graph& g, const Tensor& go) {
        Tensor gx(x.shape()), gw(w.shape()), gb(b.shape());
        for (std::size_t n = 0; n < bn; ++n) {
            for (std::size_t k = 0; k < o; ++k) {
                const double d = go[n * o + k];
                gb[k] += d;
                for (std::size_t i = 0; i < f; ++i) {
                    gx[n * f + i] += d * w.value()[k * f + i];
                    gw[k * f + i] += d * x.value()[n * f + i];
                }
            }
        }
        g.accumulate(x, gx);
        g.accumulate(w, gw);
        g.accumulate(b, gb);
    });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    const auto& ls = logits.shape();
    if (ls.size() != 2) throw ShapeError("cross_entropy: logits must be [B,K], got " + to_string(ls));
    if (labels.size() != ls[0]) throw ShapeError("cross_entropy(labels)", 0, labels.size(), ls[0]);
    const std::size_t bn = ls[0], k = ls[1];
    Tensor probs(ls);
    double loss = 0.0;
    for (std::size_t n = 0; n < bn; ++n) {
        const double* row = logits.value().data().data() + n * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const auto label = static_cast<std::size_t>(labels[n]);
        if (label >= k) throw std::invalid_argument("cross_entropy: label out of range");
        loss -= row[label] - mx - std::log(z);
        for (std::size_t j = 0; j < k; ++j) probs[n * k + j] = std::exp(row[j] - mx) / z;
    }
    loss /= static_cast<double>(bn);
    std::vector<int> lab(labels.begin(), labels.end());
    return logits.graph().record("cross_entropy", Tensor::scalar(loss), {logits},
                                 [logits, probs, lab, bn, k](Graph& g, const Tensor& go) {
                                     Tensor gl = probs;
                                     for (std::size_t n = 0; n < bn; ++n) gl[n * k + static_cast<std::size_t>(lab[n])] -= 1.0;
                                     gl *= go.item() / static_cast<double>(bn);
                                     g.accumulate(logits, gl);
                                 });
}

}  // namespace ops

Eigen::MatrixXd jacobian(const VarFn& f, const Tensor& x) {
    Graph g;
    Var xv = g.leaf(x, true);
    Var y = f(g, xv);
    const std::size_t m = y.value().size();
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(x.size()));
    Tensor seed(y.shape());
    for (std::size_t i = 0; i < m; ++i) {
        seed[i] = 1.0;
        g.backward(y, seed);
        seed[i] = 0.0;
        const Tensor gx = g.grad(xv);
        for (std::size_t j = 0; j < gx.size(); ++j) jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gx[j];
    }
    return jac;
}

std::pair<double, Tensor> value_and_grad(const VarFn& f, const Tensor& x) {
    Graph g;
    Var xv = g.leaf(x, true);
    Var y = f(g, xv);
    g.backward(y);
    return {y.value().item(), g.grad(xv)};
}

}  // namespace lowpass
