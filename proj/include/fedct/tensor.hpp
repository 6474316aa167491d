#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace fedct {

class Tape;

namespace detail {

struct TensorNode {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::vector<double> grad;  // sized iff requires_grad
    bool requires_grad = false;
    bool grad_live = false;      // backward() has run since the last clear
    const Tape* producer = nullptr;  // tape that recorded the op producing this node
};

}  // namespace detail

// Dense 2-D double tensor. Copying a Tensor aliases the same storage (the
// handle model every autograd engine uses); deep copies are explicit via
// clone(). Gradients live next to the data when requires_grad is set.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor row_vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor row_vector(const std::vector<double>& values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n);

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->data.size(); }
    bool is_scalar() const { return defined() && size() == 1; }
    bool is_vector() const { return defined() && (node_->rows == 1 || node_->cols == 1); }

    double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->cols + c]; }
    double& at(std::size_t r, std::size_t c) { return node_->data[r * node_->cols + c]; }

    std::span<const double> data() const { return node_->data; }
    std::span<double> data() { return node_->data; }

    bool requires_grad() const { return defined() && node_->requires_grad; }
    bool grad_live() const { return defined() && node_->grad_live; }
    std::span<const double> grad() const;
    std::span<double> grad();
    void zero_grad();

    // Value of a scalar tensor; ContractError otherwise.
    double value() const;

    Tensor clone() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend class Tape;
    friend Tensor make_op_output(std::size_t, std::size_t, std::vector<double>,
                                 const std::vector<Tensor>&);
};

// Define-by-run gradient tape. Constructing a Tape makes it the active
// recorder for the current thread (RAII; the previous one is restored on
// destruction). Ops record a backward closure when a tape is active and at
// least one input requires grad. With no active tape, ops are forward-only,
// which is the evaluation mode used for prototype extraction and metrics.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse order.
    // Gradients accumulate additively into every requires_grad ancestor.
    void backward(const Tensor& loss);

    std::size_t num_ops() const { return records_.size(); }

    static Tape* active();

    // Internal: used by ops to register a backward rule.
    void record(std::function<void()> backward_fn, const Tensor& output);

private:
    std::vector<std::function<void()>> records_;
    Tape* previous_ = nullptr;
};

// --- Differentiable ops -----------------------------------------------------
// Every op validates shapes, computes forward, checks the result is finite,
// and registers its backward rule with the active tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor sub(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_row_bias(const Tensor& m, const Tensor& bias);  // m: b x n, bias: 1 x n
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);                             // -> scalar

// Mean over rows of -log softmax(logits)[label]; max-subtraction stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// u.v / (|u||v| + eps) with eps = 1e-12; exact zero vectors yield 0 with a
// zero (sub)gradient instead of an error.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

// Rows of `a` selected by index (duplicates allowed); backward scatters.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices);

// K scalar tensors -> 1 x K row.
Tensor concat_scalars(const std::vector<Tensor>& scalars);

// backward() on the active tape; ContractError if loss is not scalar or no
// tape is active.
void backward(const Tensor& loss);

// p <- p - lr * (grad + weight_decay * p) for every param; grads cleared.
// ContractError if any param is missing a live gradient.
void sgd_step(std::span<Tensor> params, double learning_rate, double weight_decay);

// Central-difference gradient check. `make_loss` must rebuild the loss from
// the current parameter values on every call. Returns the max over all
// parameter coordinates of |analytic - numeric| / max(1, |numeric|).
double finite_difference_check(const std::function<Tensor()>& make_loss,
                               std::span<Tensor> params, double step);

}  // namespace fedct
