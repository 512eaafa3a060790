#include "dynamar/autograd.hpp"

#include "dynamar/error.hpp"

#include <cassert>
#include <cmath>

namespace dynamar::ag {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

} // namespace

Node* Graph::make(Tensor val, bool needs_grad, std::function<void(Node&)> back) {
    auto node = std::make_unique<Node>();
    node->val = std::move(val);
    node->needs_grad = needs_grad;
    node->back = std::move(back);
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
}

Node* Graph::leaf(const Tensor& value, bool needs_grad) { return make(value, needs_grad); }

Node* Graph::matmul(Node* a, Node* b) {
    assert(a->val.cols == b->val.rows);
    Tensor out(a->val.rows, b->val.cols);
    gemm_nn(a->val, b->val, out);
    const bool ng = a->needs_grad || b->needs_grad;
    return make(std::move(out), ng, [a, b](Node& self) {
        if (a->needs_grad) gemm_nt(self.grad, b->val, a->ensure_grad(), /*acc=*/true);
        if (b->needs_grad) gemm_tn(a->val, self.grad, b->ensure_grad(), /*acc=*/true);
    });
}

Node* Graph::matmul_nt(Node* a, Node* b) {
    assert(a->val.cols == b->val.cols);
    Tensor out(a->val.rows, b->val.rows);
    gemm_nt(a->val, b->val, out);
    const bool ng = a->needs_grad || b->needs_grad;
    return make(std::move(out), ng, [a, b](Node& self) {
        if (a->needs_grad) gemm_nn(self.grad, b->val, a->ensure_grad(), /*acc=*/true);
        if (b->needs_grad) gemm_tn(self.grad, a->val, b->ensure_grad(), /*acc=*/true);
    });
}

Node* Graph::add(Node* a, Node* b) {
    assert(a->val.same_shape(b->val));
    Tensor out = a->val;
    axpy(1.0, b->val, out);
    const bool ng = a->needs_grad || b->needs_grad;
    return make(std::move(out), ng, [a, b](Node& self) {
        if (a->needs_grad) axpy(1.0, self.grad, a->ensure_grad());
        if (b->needs_grad) axpy(1.0, self.grad, b->ensure_grad());
    });
}

Node* Graph::add_row_broadcast(Node* a, Node* bias) {
    assert(bias->val.rows == 1 && bias->val.cols == a->val.cols);
    Tensor out = a->val;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out.at(r, c) += bias->val.at(0, c);
    const bool ng = a->needs_grad || bias->needs_grad;
    return make(std::move(out), ng, [a, bias](Node& self) {
        if (a->needs_grad) axpy(1.0, self.grad, a->ensure_grad());
        if (bias->needs_grad) {
            Tensor& bg = bias->ensure_grad();
            for (int r = 0; r < self.grad.rows; ++r)
                for (int c = 0; c < self.grad.cols; ++c) bg.at(0, c) += self.grad.at(r, c);
        }
    });
}

Node* Graph::scale(Node* a, double c) {
    Tensor out = a->val;
    for (double& x : out.v) x *= c;
    return make(std::move(out), a->needs_grad, [a, c](Node& self) {
        if (!a->needs_grad) return;
        axpy(c, self.grad, a->ensure_grad());
    });
}

Node* Graph::gelu(Node* a) {
    Tensor out = a->val;
    for (double& x : out.v) x = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    return make(std::move(out), a->needs_grad, [a](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (std::size_t i = 0; i < ag.size(); ++i) {
            const double x = a->val.v[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ag.v[i] += self.grad.v[i] * (cdf + x * pdf);
        }
    });
}

Node* Graph::layer_norm(Node* a, Node* gain, Node* bias, double eps) {
    const int R = a->val.rows, C = a->val.cols;
    assert(gain->val.rows == 1 && gain->val.cols == C && bias->val.rows == 1 && bias->val.cols == C);

    // Keep normalized values and inverse stddevs for the backward pass.
    auto xhat = std::make_shared<Tensor>(R, C);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(R));

    Tensor out(R, C);
    for (int r = 0; r < R; ++r) {
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += a->val.at(r, c);
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = a->val.at(r, c) - mean;
            var += d * d;
        }
        var /= C;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (int c = 0; c < C; ++c) {
            const double xh = (a->val.at(r, c) - mean) * is;
            xhat->at(r, c) = xh;
            out.at(r, c) = xh * gain->val.at(0, c) + bias->val.at(0, c);
        }
    }

    const bool ng = a->needs_grad || gain->needs_grad || bias->needs_grad;
    return make(std::move(out), ng, [a, gain, bias, xhat, inv_std, C](Node& self) {
        for (int r = 0; r < self.grad.rows; ++r) {
            // dxhat = dy * g; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int c = 0; c < C; ++c) {
                const double dxh = self.grad.at(r, c) * gain->val.at(0, c);
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xhat->at(r, c);
            }
            const double m1 = sum_dxhat / C;
            const double m2 = sum_dxhat_xhat / C;
            if (a->needs_grad) {
                Tensor& agr = a->ensure_grad();
                const double is = (*inv_std)[static_cast<std::size_t>(r)];
                for (int c = 0; c < C; ++c) {
                    const double dxh = self.grad.at(r, c) * gain->val.at(0, c);
                    agr.at(r, c) += is * (dxh - m1 - xhat->at(r, c) * m2);
                }
            }
            if (gain->needs_grad) {
                Tensor& gg = gain->ensure_grad();
                for (int c = 0; c < C; ++c) gg.at(0, c) += self.grad.at(r, c) * xhat->at(r, c);
            }
            if (bias->needs_grad) {
                Tensor& bg = bias->ensure_grad();
                for (int c = 0; c < C; ++c) bg.at(0, c) += self.grad.at(r, c);
            }
        }
    });
}

Node* Graph::dropout(Node* a, double rate, Rng& rng) {
    assert(rate >= 0.0 && rate < 1.0);
    if (rate == 0.0) return a;
    auto mask = std::make_shared<std::vector<double>>(a->val.size());
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rand_unit(rng) < rate ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out.v[i] *= m;
    }
    return make(std::move(out), a->needs_grad, [a, mask](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (std::size_t i = 0; i < ag.size(); ++i) ag.v[i] += self.grad.v[i] * (*mask)[i];
    });
}

Node* Graph::masked_softmax_rows(Node* a, int valid_cols) {
    const int R = a->val.rows, C = a->val.cols;
    assert(valid_cols >= 1 && valid_cols <= C);
    Tensor out(R, C);
    for (int r = 0; r < R; ++r) {
        double mx = a->val.at(r, 0);
        for (int c = 1; c < valid_cols; ++c) mx = std::max(mx, a->val.at(r, c));
        double z = 0.0;
        for (int c = 0; c < valid_cols; ++c) {
            const double e = std::exp(a->val.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < valid_cols; ++c) out.at(r, c) /= z;
        // columns >= valid_cols stay exactly zero
    }
    return make(std::move(out), a->needs_grad, [a, valid_cols](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (int r = 0; r < self.grad.rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < valid_cols; ++c) dot += self.grad.at(r, c) * self.val.at(r, c);
            for (int c = 0; c < valid_cols; ++c)
                ag.at(r, c) += self.val.at(r, c) * (self.grad.at(r, c) - dot);
        }
    });
}

Node* Graph::block(Node* a, int r0, int rs, int c0, int cs) {
    assert(r0 >= 0 && r0 + rs <= a->val.rows && c0 >= 0 && c0 + cs <= a->val.cols);
    Tensor out(rs, cs);
    for (int r = 0; r < rs; ++r)
        for (int c = 0; c < cs; ++c) out.at(r, c) = a->val.at(r0 + r, c0 + c);
    return make(std::move(out), a->needs_grad, [a, r0, c0](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (int r = 0; r < self.grad.rows; ++r)
            for (int c = 0; c < self.grad.cols; ++c) ag.at(r0 + r, c0 + c) += self.grad.at(r, c);
    });
}

Node* Graph::assemble(int rows, int cols, const std::vector<std::tuple<Node*, int, int>>& pieces) {
    Tensor out(rows, cols);
    bool ng = false;
    for (const auto& [node, r0, c0] : pieces) {
        ng = ng || node->needs_grad;
        for (int r = 0; r < node->val.rows; ++r)
            for (int c = 0; c < node->val.cols; ++c) out.at(r0 + r, c0 + c) = node->val.at(r, c);
    }
    return make(std::move(out), ng, [pieces](Node& self) {
        for (const auto& [node, r0, c0] : pieces) {
            if (!node->needs_grad) continue;
            Tensor& g = node->ensure_grad();
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) g.at(r, c) += self.grad.at(r0 + r, c0 + c);
        }
    });
}

Node* Graph::gather_rows(Node* a, const std::vector<int>& row_indices) {
    Tensor out(static_cast<int>(row_indices.size()), a->val.cols);
    for (std::size_t i = 0; i < row_indices.size(); ++i) {
        assert(row_indices[i] >= 0 && row_indices[i] < a->val.rows);
        for (int c = 0; c < a->val.cols; ++c) out.at(static_cast<int>(i), c) = a->val.at(row_indices[i], c);
    }
    return make(std::move(out), a->needs_grad, [a, row_indices](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (std::size_t i = 0; i < row_indices.size(); ++i)
            for (int c = 0; c < self.grad.cols; ++c)
                ag.at(row_indices[i], c) += self.grad.at(static_cast<int>(i), c);
    });
}

Node* Graph::mean_rows_ranges(Node* a, const std::vector<std::pair<int, int>>& ranges) {
    Tensor out(static_cast<int>(ranges.size()), a->val.cols);
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto [start, len] = ranges[i];
        assert(len > 0 && start >= 0 && start + len <= a->val.rows);
        for (int c = 0; c < a->val.cols; ++c) {
            double s = 0.0;
            for (int r = 0; r < len; ++r) s += a->val.at(start + r, c);
            out.at(static_cast<int>(i), c) = s / len;
        }
    }
    return make(std::move(out), a->needs_grad, [a, ranges](Node& self) {
        if (!a->needs_grad) return;
        Tensor& ag = a->ensure_grad();
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            const auto [start, len] = ranges[i];
            for (int c = 0; c < self.grad.cols; ++c) {
                const double g = self.grad.at(static_cast<int>(i), c) / len;
                for (int r = 0; r < len; ++r) ag.at(start + r, c) += g;
            }
        }
    });
}

Node* Graph::embedding_rows(Node* table, const std::vector<int>& ids) {
    Tensor out(static_cast<int>(ids.size()), table->val.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        assert(ids[i] >= 0 && ids[i] < table->val.rows);
        for (int c = 0; c < table->val.cols; ++c) out.at(static_cast<int>(i), c) = table->val.at(ids[i], c);
    }
    return make(std::move(out), table->needs_grad, [table, ids](Node& self) {
        if (!table->needs_grad) return;
        Tensor& tg = table->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int c = 0; c < self.grad.cols; ++c) tg.at(ids[i], c) += self.grad.at(static_cast<int>(i), c);
    });
}

Node* Graph::softmax_cross_entropy(Node* logits, const std::vector<int>& targets) {
    if (targets.empty()) fail(Errc::EmptyTargets, "cross-entropy needs at least one target");
    assert(static_cast<int>(targets.size()) == logits->val.rows);
    const int N = logits->val.rows, C = logits->val.cols;

    auto probs = std::make_shared<Tensor>(N, C);
    double loss = 0.0;
    for (int r = 0; r < N; ++r) {
        double mx = logits->val.at(r, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, logits->val.at(r, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(logits->val.at(r, c) - mx);
            probs->at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < C; ++c) probs->at(r, c) /= z;
        assert(targets[static_cast<std::size_t>(r)] >= 0 && targets[static_cast<std::size_t>(r)] < C);
        loss -= std::log(probs->at(r, targets[static_cast<std::size_t>(r)]));
    }
    Tensor out(1, 1);
    out.at(0, 0) = loss / N;
    return make(std::move(out), logits->needs_grad, [logits, targets, probs, N, C](Node& self) {
        if (!logits->needs_grad) return;
        Tensor& lg = logits->ensure_grad();
        const double g = self.grad.at(0, 0) / N;
        for (int r = 0; r < N; ++r) {
            for (int c = 0; c < C; ++c) lg.at(r, c) += g * probs->at(r, c);
            lg.at(r, targets[static_cast<std::size_t>(r)]) -= g;
        }
    });
}

Node* Graph::mse_loss(Node* pred, const std::vector<double>& targets) {
    if (targets.empty()) fail(Errc::EmptyTargets, "mse needs at least one target");
    assert(pred->val.cols == 1 && static_cast<int>(targets.size()) == pred->val.rows);
    const int N = pred->val.rows;
    double loss = 0.0;
    for (int r = 0; r < N; ++r) {
        const double d = pred->val.at(r, 0) - targets[static_cast<std::size_t>(r)];
        loss += d * d;
    }
    Tensor out(1, 1);
    out.at(0, 0) = loss / N;
    return make(std::move(out), pred->needs_grad, [pred, targets, N](Node& self) {
        if (!pred->needs_grad) return;
        Tensor& pg = pred->ensure_grad();
        const double g = self.grad.at(0, 0);
        for (int r = 0; r < N; ++r)
            pg.at(r, 0) += g * 2.0 * (pred->val.at(r, 0) - targets[static_cast<std::size_t>(r)]) / N;
    });
}

void Graph::backward(Node* root) {
    assert(root->val.rows == 1 && root->val.cols == 1);
    root->ensure_grad().at(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.grad_alloc && n.back) n.back(n);
    }
}

} // namespace dynamar::ag
