#include "trifuse/autodiff.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace trifuse::ad {

namespace {

NodePtr make_node(std::string op, Matrix value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->op = std::move(op);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    for (const auto& p : n->parents) {
        if (p->active) {
            n->active = true;
            break;
        }
    }
    return n;
}

void accumulate(Node& target, const Matrix& contribution) {
    Matrix& g = target.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += contribution.data()[i];
}

}  // namespace

NodePtr leaf(Matrix value, std::string name) {
    auto n = std::make_shared<Node>();
    n->op = std::move(name);
    n->value = std::move(value);
    n->requires_grad = true;
    n->active = true;
    return n;
}

NodePtr constant(Matrix value, std::string name) {
    auto n = std::make_shared<Node>();
    n->op = std::move(name);
    n->value = std::move(value);
    return n;
}

void backward(const NodePtr& root) {
    if (!root) throw NumericError("backward: null root");
    if (root->value.rows() != 1 || root->value.cols() != 1) {
        throw NumericError("backward: root must be 1x1, got " + root->value.shape_str());
    }
    // Iterative post-order so each node appears once, parents before children
    // in the resulting list.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->active && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_leaf()) n->zero_grad();
    }
    root->grad().data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->active) n->backprop(*n);
    }
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    return make_node("matmul", trifuse::matmul(a->value, b->value), {a, b}, [](Node& n) {
        const Matrix& g = n.grad();
        Node& a = *n.parents[0];
        Node& b = *n.parents[1];
        if (a.active) accumulate(a, matmul_nt(g, b.value));
        if (b.active) accumulate(b, matmul_tn(a.value, g));
    });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return make_node("add", trifuse::add(a->value, b->value), {a, b}, [](Node& n) {
        const Matrix& g = n.grad();
        if (n.parents[0]->active) accumulate(*n.parents[0], g);
        if (n.parents[1]->active) accumulate(*n.parents[1], g);
    });
}

NodePtr scale(const NodePtr& a, double s) {
    return make_node("scale", scaled(a->value, s), {a}, [s](Node& n) {
        if (!n.parents[0]->active) return;
        accumulate(*n.parents[0], scaled(n.grad(), s));
    });
}

NodePtr add_bias_rows(const NodePtr& x, const NodePtr& bias) {
    return make_node("add_bias_rows", trifuse::add_bias_rows(x->value, bias->value), {x, bias},
                     [](Node& n) {
                         const Matrix& g = n.grad();
                         Node& x = *n.parents[0];
                         Node& bias = *n.parents[1];
                         if (x.active) accumulate(x, g);
                         if (bias.active) {
                             Matrix& bg = bias.grad();
                             for (std::size_t i = 0; i < g.rows(); ++i)
                                 for (std::size_t j = 0; j < g.cols(); ++j)
                                     bg.data()[j] += g(i, j);
                         }
                     });
}

NodePtr relu(const NodePtr& x) {
    Matrix v = x->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = std::max(0.0, v.data()[i]);
    return make_node("relu", std::move(v), {x}, [](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const Matrix& g = n.grad();
        Matrix contrib = g;
        for (std::size_t i = 0; i < contrib.size(); ++i) {
            if (x.value.data()[i] <= 0.0) contrib.data()[i] = 0.0;
        }
        accumulate(x, contrib);
    });
}

NodePtr logistic(const NodePtr& x) {
    Matrix v = x->value;
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = 1.0 / (1.0 + std::exp(-v.data()[i]));
    return make_node("logistic", std::move(v), {x}, [](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const Matrix& g = n.grad();
        Matrix contrib = g;
        for (std::size_t i = 0; i < contrib.size(); ++i) {
            const double y = n.value.data()[i];
            contrib.data()[i] *= y * (1.0 - y);
        }
        accumulate(x, contrib);
    });
}

NodePtr softmax_rows(const NodePtr& x) {
    return make_node("softmax_rows", trifuse::softmax_rows(x->value), {x}, [](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const Matrix& g = n.grad();
        const Matrix& y = n.value;
        Matrix contrib(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                contrib(i, j) = y(i, j) * (g(i, j) - dot);
        }
        accumulate(x, contrib);
    });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
    return make_node(
        "layer_norm", trifuse::layer_norm(x->value, gain->value, bias->value, eps),
        {x, gain, bias}, [eps](Node& n) {
            Node& x = *n.parents[0];
            Node& gain = *n.parents[1];
            Node& bias = *n.parents[2];
            const Matrix& g = n.grad();
            const std::size_t d = x.value.cols();
            const double dd = static_cast<double>(d);
            Matrix xg(x.value.rows(), d);
            Matrix gaing(1, d);
            Matrix biasg(1, d);
            for (std::size_t i = 0; i < x.value.rows(); ++i) {
                double mean = 0.0;
                for (std::size_t j = 0; j < d; ++j) mean += x.value(i, j);
                mean /= dd;
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = x.value(i, j) - mean;
                    var += c * c;
                }
                var /= dd;
                const double inv = 1.0 / std::sqrt(var + eps);
                // d(normalized)/dx via the chain through mean and variance.
                double sum_dxhat = 0.0, sum_dxhat_xc = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxhat = g(i, j) * gain.value.data()[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xc += dxhat * (x.value(i, j) - mean);
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const double xc = x.value(i, j) - mean;
                    const double xhat = xc * inv;
                    const double dxhat = g(i, j) * gain.value.data()[j];
                    xg(i, j) = inv * (dxhat - sum_dxhat / dd - xhat * (sum_dxhat_xc * inv) / dd);
                    gaing.data()[j] += g(i, j) * xhat;
                    biasg.data()[j] += g(i, j);
                }
            }
            if (x.active) accumulate(x, xg);
            if (gain.active) accumulate(gain, gaing);
            if (bias.active) accumulate(bias, biasg);
        });
}

NodePtr conv1d_same(const NodePtr& seq, const NodePtr& kernel, const NodePtr& bias,
                    std::size_t width) {
    return make_node(
        "conv1d", trifuse::conv1d_same(seq->value, kernel->value, bias->value, width),
        {seq, kernel, bias}, [width](Node& n) {
            Node& seq = *n.parents[0];
            Node& kernel = *n.parents[1];
            Node& bias = *n.parents[2];
            const Matrix& g = n.grad();
            const std::size_t t_len = seq.value.rows();
            const std::size_t d_in = seq.value.cols();
            const std::size_t d_out = g.cols();
            const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(width / 2);
            Matrix seqg(t_len, d_in);
            Matrix kerng(kernel.value.rows(), d_out);
            Matrix biasg(1, d_out);
            for (std::size_t t = 0; t < t_len; ++t) {
                const double* grow = g.data() + t * d_out;
                for (std::size_t j = 0; j < d_out; ++j) biasg.data()[j] += grow[j];
                for (std::size_t w = 0; w < width; ++w) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                               static_cast<std::ptrdiff_t>(w) - center;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                    const double* xrow = seq.value.data() + static_cast<std::size_t>(src) * d_in;
                    const double* kblock = kernel.value.data() + w * d_in * d_out;
                    double* xgrow = seqg.data() + static_cast<std::size_t>(src) * d_in;
                    double* kgblock = kerng.data() + w * d_in * d_out;
                    for (std::size_t p = 0; p < d_in; ++p) {
                        const double* krow = kblock + p * d_out;
                        double* kgrow = kgblock + p * d_out;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d_out; ++j) {
                            acc += grow[j] * krow[j];
                            kgrow[j] += xrow[p] * grow[j];
                        }
                        xgrow[p] += acc;
                    }
                }
            }
            if (seq.active) accumulate(seq, seqg);
            if (kernel.active) accumulate(kernel, kerng);
            if (bias.active) accumulate(bias, biasg);
        });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts.front()->value.rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) {
            throw DimensionError("concat_cols: row counts differ (" +
                                 parts.front()->value.shape_str() + " vs " +
                                 p->value.shape_str() + ")");
        }
        cols += p->value.cols();
    }
    Matrix v(rows, cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < p->value.cols(); ++j) v(i, off + j) = p->value(i, j);
        off += p->value.cols();
    }
    return make_node("concat_cols", std::move(v), parts, [](Node& n) {
        const Matrix& g = n.grad();
        std::size_t off = 0;
        for (auto& parent : n.parents) {
            const std::size_t w = parent->value.cols();
            if (parent->active) {
                Matrix part(g.rows(), w);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) part(i, j) = g(i, off + j);
                accumulate(*parent, part);
            }
            off += w;
        }
    });
}

NodePtr slice_cols(const NodePtr& x, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > x->value.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") out of " + x->value.shape_str());
    }
    Matrix v(x->value.rows(), c1 - c0);
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) = x->value(i, c0 + j);
    return make_node("slice_cols", std::move(v), {x}, [c0](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const Matrix& g = n.grad();
        Matrix contrib(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) contrib(i, c0 + j) = g(i, j);
        accumulate(x, contrib);
    });
}

NodePtr transpose(const NodePtr& x) {
    return make_node("transpose", transposed(x->value), {x}, [](Node& n) {
        if (!n.parents[0]->active) return;
        accumulate(*n.parents[0], transposed(n.grad()));
    });
}

NodePtr mean_rows(const NodePtr& x) {
    const std::size_t t_len = x->value.rows();
    Matrix v(1, x->value.cols());
    for (std::size_t i = 0; i < t_len; ++i)
        for (std::size_t j = 0; j < x->value.cols(); ++j) v.data()[j] += x->value(i, j);
    for (std::size_t j = 0; j < v.size(); ++j) v.data()[j] /= static_cast<double>(t_len);
    return make_node("mean_rows", std::move(v), {x}, [t_len](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const Matrix& g = n.grad();
        Matrix contrib(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < t_len; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                contrib(i, j) = g.data()[j] / static_cast<double>(t_len);
        accumulate(x, contrib);
    });
}

NodePtr mean_all(const NodePtr& x) {
    const std::size_t n_elems = x->value.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) sum += x->value.data()[i];
    Matrix v(1, 1);
    v.data()[0] = sum / static_cast<double>(n_elems);
    return make_node("mean_all", std::move(v), {x}, [n_elems](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const double g = n.grad().data()[0] / static_cast<double>(n_elems);
        Matrix contrib(x.value.rows(), x.value.cols(), g);
        accumulate(x, contrib);
    });
}

NodePtr weighted_sum(const NodePtr& x, Matrix weights) {
    require_same_shape(x->value, weights, "weighted_sum");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        sum += weights.data()[i] * x->value.data()[i];
    Matrix v(1, 1);
    v.data()[0] = sum;
    auto w = std::make_shared<Matrix>(std::move(weights));
    return make_node("weighted_sum", std::move(v), {x}, [w](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        const double g = n.grad().data()[0];
        Matrix contrib = *w;
        for (std::size_t i = 0; i < contrib.size(); ++i) contrib.data()[i] *= g;
        accumulate(x, contrib);
    });
}

NodePtr dropout(const NodePtr& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return x;
    const double inv_keep = 1.0 / (1.0 - p);
    auto mask = std::make_shared<Matrix>(x->value.rows(), x->value.cols());
    Matrix v = x->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double m = rng.uniform() < p ? 0.0 : inv_keep;
        mask->data()[i] = m;
        v.data()[i] *= m;
    }
    return make_node("dropout", std::move(v), {x}, [mask](Node& n) {
        Node& x = *n.parents[0];
        if (!x.active) return;
        Matrix contrib = n.grad();
        for (std::size_t i = 0; i < contrib.size(); ++i) contrib.data()[i] *= mask->data()[i];
        accumulate(x, contrib);
    });
}

NodePtr mse_against(const NodePtr& pred, Matrix target) {
    require_same_shape(pred->value, target, "mse");
    const std::size_t n_elems = target.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n_elems; ++i) {
        const double d = pred->value.data()[i] - target.data()[i];
        sum += d * d;
    }
    Matrix v(1, 1);
    v.data()[0] = sum / static_cast<double>(n_elems);
    auto t = std::make_shared<Matrix>(std::move(target));
    return make_node("mse", std::move(v), {pred}, [t, n_elems](Node& n) {
        Node& pred = *n.parents[0];
        if (!pred.active) return;
        const double g = n.grad().data()[0] * 2.0 / static_cast<double>(n_elems);
        Matrix contrib(pred.value.rows(), pred.value.cols());
        for (std::size_t i = 0; i < contrib.size(); ++i)
            contrib.data()[i] = g * (pred.value.data()[i] - t->data()[i]);
        accumulate(pred, contrib);
    });
}

NodePtr cross_entropy_with_indices(const NodePtr& logits, std::vector<std::size_t> targets) {
    const std::size_t batch = logits->value.rows();
    const std::size_t k = logits->value.cols();
    if (k < 2) throw DimensionError("cross_entropy: needs >= 2 classes, got " + std::to_string(k));
    if (targets.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(batch) + " rows");
    }
    for (std::size_t t : targets) {
        if (t >= k) {
            throw DataError("cross_entropy: class index " + std::to_string(t) +
                            " out of range [0, " + std::to_string(k) + ")");
        }
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        double mx = logits->value(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits->value(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < k; ++j) lse += std::exp(logits->value(i, j) - mx);
        sum += mx + std::log(lse) - logits->value(i, targets[i]);
    }
    Matrix v(1, 1);
    v.data()[0] = sum / static_cast<double>(batch);
    auto tg = std::make_shared<std::vector<std::size_t>>(std::move(targets));
    return make_node("cross_entropy", std::move(v), {logits}, [tg, batch](Node& n) {
        Node& logits = *n.parents[0];
        if (!logits.active) return;
        const double g = n.grad().data()[0] / static_cast<double>(batch);
        Matrix contrib = trifuse::softmax_rows(logits.value);
        for (std::size_t i = 0; i < batch; ++i) contrib(i, (*tg)[i]) -= 1.0;
        for (std::size_t i = 0; i < contrib.size(); ++i) contrib.data()[i] *= g;
        accumulate(logits, contrib);
    });
}

NodePtr gather_true_prob(const NodePtr& probs, std::vector<std::size_t> targets) {
    const std::size_t batch = probs->value.rows();
    const std::size_t k = probs->value.cols();
    if (targets.size() != batch) {
        throw DimensionError("gather_true_prob: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(batch) + " rows");
    }
    Matrix v(batch, 1);
    for (std::size_t i = 0; i < batch; ++i) {
        if (targets[i] >= k) {
            throw DataError("gather_true_prob: class index " + std::to_string(targets[i]) +
                            " out of range [0, " + std::to_string(k) + ")");
        }
        v(i, 0) = probs->value(i, targets[i]);
    }
    auto tg = std::make_shared<std::vector<std::size_t>>(std::move(targets));
    return make_node("gather_true_prob", std::move(v), {probs}, [tg](Node& n) {
        Node& probs = *n.parents[0];
        if (!probs.active) return;
        const Matrix& g = n.grad();
        Matrix contrib(probs.value.rows(), probs.value.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) contrib(i, (*tg)[i]) = g(i, 0);
        accumulate(probs, contrib);
    });
}

NodePtr focal_pointwise(const NodePtr& p_true, double alpha_t, double gamma) {
    if (alpha_t < 0.0) throw ConfigError("focal: alpha_t must be >= 0");
    if (gamma < 0.0 || gamma > 5.0) throw ConfigError("focal: gamma must be in [0, 5]");
    constexpr double p_floor = 1e-12;
    Matrix v(p_true->value.rows(), p_true->value.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double p = std::max(p_true->value.data()[i], p_floor);
        v.data()[i] = -alpha_t * std::pow(1.0 - p, gamma) * std::log(p);
    }
    return make_node("focal", std::move(v), {p_true}, [alpha_t, gamma, p_floor](Node& n) {
        Node& pt = *n.parents[0];
        if (!pt.active) return;
        const Matrix& g = n.grad();
        Matrix contrib(pt.value.rows(), pt.value.cols());
        for (std::size_t i = 0; i < contrib.size(); ++i) {
            const double p = std::max(pt.value.data()[i], p_floor);
            const double one_m = 1.0 - p;
            // d/dp of -a*(1-p)^g*log(p); the first term vanishes as p -> 1.
            const double t1 =
                (gamma == 0.0 || one_m == 0.0) ? 0.0
                                               : gamma * std::pow(one_m, gamma - 1.0) * std::log(p);
            const double t2 = std::pow(one_m, gamma) / p;
            contrib.data()[i] = g.data()[i] * (-alpha_t) * (t2 - t1);
        }
        accumulate(pt, contrib);
    });
}

}  // namespace trifuse::ad
