#include "fedct/tensor.hpp"

#include <cmath>
#include <string>

#include "fedct/errors.hpp"

namespace fedct {

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_finite(const std::vector<double>& values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw RunError(std::string(op) + ": non-finite value in result");
        }
    }
}

std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
    for (const auto& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

}  // namespace

// Builds the output node of an op: allocates grad storage and marks the
// producer tape when the result participates in differentiation.
Tensor make_op_output(std::size_t rows, std::size_t cols, std::vector<double> data,
                      const std::vector<Tensor>& inputs) {
    auto node = std::make_shared<detail::TensorNode>();
    node->rows = rows;
    node->cols = cols;
    node->data = std::move(data);
    if (Tape::active() != nullptr && any_requires_grad(inputs)) {
        node->requires_grad = true;
        node->grad.assign(node->data.size(), 0.0);
        node->producer = Tape::active();
    }
    return Tensor(std::move(node));
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> data,
                    bool requires_grad) {
    if (data.size() != rows * cols) {
        throw DimensionError("Tensor::from: data length " + std::to_string(data.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->rows = rows;
    node->cols = cols;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->data.size(), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::row_vector(std::initializer_list<double> values, bool requires_grad) {
    return from(1, values.size(), std::vector<double>(values), requires_grad);
}

Tensor Tensor::row_vector(const std::vector<double>& values, bool requires_grad) {
    return from(1, values.size(), values, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from(1, 1, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return from(n, n, std::move(d));
}

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) throw ContractError("Tensor::grad: tensor does not require grad");
    return node_->grad;
}

std::span<double> Tensor::grad() {
    if (!requires_grad()) throw ContractError("Tensor::grad: tensor does not require grad");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!requires_grad()) return;
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    node_->grad_live = false;
}

double Tensor::value() const {
    if (!is_scalar()) {
        throw ContractError("Tensor::value: expected scalar, got " + shape_str(*this));
    }
    return node_->data[0];
}

Tensor Tensor::clone() const {
    return from(rows(), cols(), node_->data, node_->requires_grad);
}

// --- Tape -------------------------------------------------------------------

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn, const Tensor& output) {
    (void)output;
    records_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw ContractError("Tape::backward: loss must be a scalar tensor");
    }
    auto* node = loss.node();
    if (node->producer != nullptr && node->producer != this) {
        throw ContractError("Tape::backward: loss was recorded on a different tape");
    }
    if (node->requires_grad) {
        node->grad[0] += 1.0;
        node->grad_live = true;
    }
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw ContractError("backward: no active tape");
    tape->backward(loss);
}

namespace {

// Accumulate `src` into the grad buffer of `t` if it participates.
inline void accumulate(const Tensor& t, const std::vector<double>& src) {
    auto* n = t.node();
    if (!n->requires_grad) return;
    for (std::size_t i = 0; i < src.size(); ++i) n->grad[i] += src[i];
    n->grad_live = true;
}

void maybe_record(const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> fn) {
    if (output.requires_grad() && Tape::active() != nullptr) {
        Tape::active()->record(std::move(fn), output);
        for (const auto& in : inputs) {
            if (in.requires_grad()) in.node()->grad_live = false;
        }
    }
}

}  // namespace

// --- Ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions " + shape_str(a) + " * " + shape_str(b));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(p, j);
        }
    }
    check_finite(out, "matmul");
    Tensor c = make_op_output(m, n, std::move(out), {a, b});
    maybe_record({a, b}, c, [a, b, c, m, k, n]() {
        const auto& dc = c.node()->grad;
        if (a.node()->requires_grad) {
            auto& da = a.node()->grad;
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * b.at(p, j);
                    da[i * k + p] += acc;
                }
            a.node()->grad_live = true;
        }
        if (b.node()->requires_grad) {
            auto& db = b.node()->grad;
            // dB = A^T * dC
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i) acc += a.at(i, p) * dc[i * n + j];
                    db[p * n + j] += acc;
                }
            b.node()->grad_live = true;
        }
    });
    return c;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    check_finite(out, "add");
    Tensor c = make_op_output(a.rows(), a.cols(), std::move(out), {a, b});
    maybe_record({a, b}, c, [a, b, c]() {
        accumulate(a, c.node()->grad);
        accumulate(b, c.node()->grad);
    });
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    check_finite(out, "sub");
    Tensor c = make_op_output(a.rows(), a.cols(), std::move(out), {a, b});
    maybe_record({a, b}, c, [a, b, c]() {
        accumulate(a, c.node()->grad);
        auto* nb = b.node();
        if (nb->requires_grad) {
            const auto& dc = c.node()->grad;
            for (std::size_t i = 0; i < dc.size(); ++i) nb->grad[i] -= dc[i];
            nb->grad_live = true;
        }
    });
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    check_finite(out, "mul");
    Tensor c = make_op_output(a.rows(), a.cols(), std::move(out), {a, b});
    maybe_record({a, b}, c, [a, b, c]() {
        const auto& dc = c.node()->grad;
        if (a.node()->requires_grad) {
            for (std::size_t i = 0; i < dc.size(); ++i) a.node()->grad[i] += dc[i] * b.data()[i];
            a.node()->grad_live = true;
        }
        if (b.node()->requires_grad) {
            for (std::size_t i = 0; i < dc.size(); ++i) b.node()->grad[i] += dc[i] * a.data()[i];
            b.node()->grad_live = true;
        }
    });
    return c;
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    check_finite(out, "scale");
    Tensor r = make_op_output(a.rows(), a.cols(), std::move(out), {a});
    maybe_record({a}, r, [a, r, c]() {
        if (a.node()->requires_grad) {
            const auto& dr = r.node()->grad;
            for (std::size_t i = 0; i < dr.size(); ++i) a.node()->grad[i] += dr[i] * c;
            a.node()->grad_live = true;
        }
    });
    return r;
}

Tensor add_row_bias(const Tensor& m, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != m.cols()) {
        throw DimensionError("add_row_bias: bias must be 1x" + std::to_string(m.cols()) +
                             ", got " + shape_str(bias));
    }
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out[i * m.cols() + j] = m.at(i, j) + bias.at(0, j);
    check_finite(out, "add_row_bias");
    Tensor c = make_op_output(m.rows(), m.cols(), std::move(out), {m, bias});
    maybe_record({m, bias}, c, [m, bias, c]() {
        const auto& dc = c.node()->grad;
        accumulate(m, dc);
        if (bias.node()->requires_grad) {
            auto& db = bias.node()->grad;
            for (std::size_t i = 0; i < m.rows(); ++i)
                for (std::size_t j = 0; j < m.cols(); ++j) db[j] += dc[i * m.cols() + j];
            bias.node()->grad_live = true;
        }
    });
    return c;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    check_finite(out, "relu");
    Tensor c = make_op_output(a.rows(), a.cols(), std::move(out), {a});
    maybe_record({a}, c, [a, c]() {
        if (a.node()->requires_grad) {
            const auto& dc = c.node()->grad;
            // Subgradient at 0 is 0.
            for (std::size_t i = 0; i < dc.size(); ++i)
                if (a.data()[i] > 0.0) a.node()->grad[i] += dc[i];
            a.node()->grad_live = true;
        }
    });
    return c;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    if (!std::isfinite(total)) throw RunError("sum: non-finite result");
    Tensor c = make_op_output(1, 1, {total}, {a});
    maybe_record({a}, c, [a, c]() {
        if (a.node()->requires_grad) {
            const double dc = c.node()->grad[0];
            for (auto& g : a.node()->grad) g += dc;
            a.node()->grad_live = true;
        }
    });
    return c;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t b = logits.rows(), k = logits.cols();
    if (b == 0) throw InputError("softmax_cross_entropy: empty batch");
    if (labels.size() != b) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(b) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(y) +
                             " out of range [0, " + std::to_string(k) + ")");
        }
    }
    // Stabilized: loss_r = logsumexp(z_r - max_r) - (z_r[y_r] - max_r).
    std::vector<double> softmax(b * k);
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(r, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            softmax[r * k + j] = std::exp(logits.at(r, j) - mx);
            denom += softmax[r * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) softmax[r * k + j] /= denom;
        total += std::log(denom) - (logits.at(r, static_cast<std::size_t>(labels[r])) - mx);
    }
    total /= static_cast<double>(b);
    if (!std::isfinite(total)) throw RunError("softmax_cross_entropy: non-finite loss");
    Tensor c = make_op_output(1, 1, {total}, {logits});
    maybe_record({logits}, c, [logits, c, labels, softmax = std::move(softmax), b, k]() {
        if (logits.node()->requires_grad) {
            const double up = c.node()->grad[0] / static_cast<double>(b);
            auto& dl = logits.node()->grad;
            for (std::size_t r = 0; r < b; ++r)
                for (std::size_t j = 0; j < k; ++j) {
                    double g = softmax[r * k + j];
                    if (j == static_cast<std::size_t>(labels[r])) g -= 1.0;
                    dl[r * k + j] += up * g;
                }
            logits.node()->grad_live = true;
        }
    });
    return c;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
    if (!u.is_vector() || !v.is_vector() || u.size() != v.size()) {
        throw DimensionError("cosine_similarity: expected equal-length vectors, got " +
                             shape_str(u) + " vs " + shape_str(v));
    }
    constexpr double kEps = 1e-12;
    const std::size_t n = u.size();
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += u.data()[i] * v.data()[i];
        uu += u.data()[i] * u.data()[i];
        vv += v.data()[i] * v.data()[i];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(nv_guard(vv));
    const double denom = nu * nv + kEps;
    const double s = dot / denom;
    if (!std::isfinite(s)) throw RunError("cosine_similarity: non-finite result");
    Tensor c = make_op_output(1, 1, {s}, {u, v});
    maybe_record({u, v}, c, [u, v, c, dot, nu, nv, denom, n]() {
        const double up = c.node()->grad[0];
        // d/du_i [u.v / (|u||v| + eps)] = v_i/denom - (u.v) |v| u_i / (|u| denom^2).
        // The norm term is dropped for an exact zero vector (subgradient 0).
        if (u.node()->requires_grad) {
            const double coef = nu > 0.0 ? dot * nv / (nu * denom * denom) : 0.0;
            for (std::size_t i = 0; i < n; ++i)
                u.node()->grad[i] += up * (v.data()[i] / denom - coef * u.data()[i]);
            u.node()->grad_live = true;
        }
        if (v.node()->requires_grad) {
            const double coef = nv > 0.0 ? dot * nu / (nv * denom * denom) : 0.0;
            for (std::size_t i = 0; i < n; ++i)
                v.node()->grad[i] += up * (u.data()[i] / denom - coef * v.data()[i]);
            v.node()->grad_live = true;
        }
    });
    return c;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InputError("gather_rows: empty index list");
    for (std::size_t idx : indices) {
        if (idx >= a.rows()) {
            throw InputError("gather_rows: row index " + std::to_string(idx) +
                             " out of range [0, " + std::to_string(a.rows()) + ")");
        }
    }
    const std::size_t k = a.cols();
    std::vector<double> out(indices.size() * k);
    for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t j = 0; j < k; ++j) out[r * k + j] = a.at(indices[r], j);
    Tensor c = make_op_output(indices.size(), k, std::move(out), {a});
    maybe_record({a}, c, [a, c, indices, k]() {
        if (a.node()->requires_grad) {
            const auto& dc = c.node()->grad;
            for (std::size_t r = 0; r < indices.size(); ++r)
                for (std::size_t j = 0; j < k; ++j)
                    a.node()->grad[indices[r] * k + j] += dc[r * k + j];
            a.node()->grad_live = true;
        }
    });
    return c;
}

Tensor concat_scalars(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw InputError("concat_scalars: empty input");
    std::vector<double> out(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = scalars[i].value();
    Tensor c = make_op_output(1, scalars.size(), std::move(out), scalars);
    maybe_record(scalars, c, [scalars, c]() {
        const auto& dc = c.node()->grad;
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            auto* n = scalars[i].node();
            if (n->requires_grad) {
                n->grad[0] += dc[i];
                n->grad_live = true;
            }
        }
    });
    return c;
}

void sgd_step(std::span<Tensor> params, double learning_rate, double weight_decay) {
    for (auto& p : params) {
        if (!p.requires_grad()) throw ContractError("sgd_step: parameter does not require grad");
        if (!p.grad_live()) {
            throw ContractError("sgd_step: parameter gradient not populated (missing backward?)");
        }
    }
    for (auto& p : params) {
        auto* n = p.node();
        for (std::size_t i = 0; i < n->data.size(); ++i) {
            n->data[i] -= learning_rate * (n->grad[i] + weight_decay * n->data[i]);
            if (!std::isfinite(n->data[i])) throw RunError("sgd_step: non-finite parameter");
        }
        p.zero_grad();
    }
}

double finite_difference_check(const std::function<Tensor()>& make_loss,
                               std::span<Tensor> params, double step) {
    // Analytic pass.
    std::vector<std::vector<double>> analytic;
    {
        for (auto& p : params) p.zero_grad();
        Tape tape;
        Tensor loss = make_loss();
        tape.backward(loss);
        for (auto& p : params) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
            p.zero_grad();
        }
    }
    // Central differences, one coordinate at a time, forward-only evals.
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto* n = params[pi].node();
        for (std::size_t i = 0; i < n->data.size(); ++i) {
            const double saved = n->data[i];
            n->data[i] = saved + step;
            const double fp = make_loss().value();
            n->data[i] = saved - step;
            const double fm = make_loss().value();
            n->data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double err =
                std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace fedct
