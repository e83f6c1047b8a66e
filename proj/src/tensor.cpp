#include "saanet/tensor.hpp"

#include <sstream>

SAANET_BEGIN_NAMESPACE

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
}

thread_local bool t_grad_enabled = true;

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, Real fill) : impl_(std::make_shared<TensorImpl>()) {
    validate_shape(shape);
    impl_->data.assign(saanet::numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : impl_(std::make_shared<TensorImpl>()) {
    validate_shape(shape);
    if (saanet::numel(shape) != data.size()) {
        throw DimensionError("shape " + to_string(shape) + " does not match data length " +
                             std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::from(Shape shape, std::initializer_list<Real> values) {
    return Tensor(std::move(shape), std::vector<Real>(values));
}

Real Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) throw DimensionError("index rank does not match " + to_string(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= impl_->shape[axis]) throw DimensionError("index out of range for " + to_string(shape()));
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

Tensor Tensor::grad() const {
    if (!has_grad()) return Tensor(impl_->shape);
    return Tensor(impl_->shape, impl_->grad);
}

std::span<Real> Tensor::grad_data() {
    impl_->ensure_grad();
    return impl_->grad;
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += Real(1);
    last_visits_ = 0;
    // Nodes are appended in execution order, so reverse order is a valid
    // topological order for the adjoint sweep.
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        ++last_visits_;
        const TensorImpl& out = *it->output;
        if (out.grad.empty()) continue;
        for (auto& in : it->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        it->backward(out);
    }
    nodes_.clear();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
    if (!t_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

bool needs_grad(std::span<const Tensor> inputs) {
    if (!t_grad_enabled) return false;
    for (const Tensor& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

Tensor make_result(const char* op, Shape shape, std::vector<Real> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn) {
    Tensor out(std::move(shape), std::move(data));
    if (!needs_grad(std::span<const Tensor>(inputs))) return out;
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
    TapeNode node;
    node.op = op;
    node.output = out.impl();
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) {
        if (t.defined()) node.inputs.push_back(t.impl());
    }
    node.backward = std::move(backward_fn);
    Tape::current().record(std::move(node));
    return out;
}

}  // namespace detail

SAANET_END_NAMESPACE
