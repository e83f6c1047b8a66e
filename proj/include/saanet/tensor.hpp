#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "saanet/config.hpp"
#include "saanet/errors.hpp"

SAANET_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
};

/// Dense row-major array with shared ownership. Copies alias the same storage;
/// use clone() for a deep copy.
class Tensor {
   public:
    Tensor();
    explicit Tensor(Shape shape, Real fill = Real(0));
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, Real v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(Real v) { return Tensor(Shape{1}, v); }
    static Tensor from(Shape shape, std::initializer_list<Real> values);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<Real> data() { return impl_->data; }
    std::span<const Real> data() const { return impl_->data; }
    Real* ptr() { return impl_->data.data(); }
    const Real* ptr() const { return impl_->data.data(); }
    Real& operator[](std::size_t i) { return impl_->data[i]; }
    Real operator[](std::size_t i) const { return impl_->data[i]; }
    Real item() const;
    Real at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);
    bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->grad.empty(); }
    /// Gradient as a detached tensor (zeros if nothing was accumulated).
    Tensor grad() const;
    std::span<Real> grad_data();
    void zero_grad() { impl_->grad.clear(); }

    Tensor clone() const;
    /// Same values, no gradient tracking, independent storage.
    Tensor detach() const { return clone(); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

   private:
    std::shared_ptr<TensorImpl> impl_;
};

/// One recorded primitive: the output it produced, the inputs it read, and the
/// adjoint rule that pushes output.grad into the inputs.
struct TapeNode {
    const char* op = "";
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

/// Per-thread record of the current forward pass. backward() replays it in
/// reverse and then frees it.
class Tape {
   public:
    static Tape& current();

    void record(TapeNode node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    /// Number of nodes visited by the most recent backward().
    std::size_t last_visit_count() const { return last_visits_; }

    void backward(const Tensor& loss);

   private:
    std::vector<TapeNode> nodes_;
    std::size_t last_visits_ = 0;
};

bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Reverse-mode pass from a scalar loss; leaf gradients accumulate.
void backward(const Tensor& loss);

// Helpers for op implementations.
namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(std::span<const Tensor> inputs);
/// Creates the output tensor and, when any input tracks gradients, records the
/// node whose adjoint rule is supplied by `make_backward` once the output exists.
Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn);

}  // namespace detail

SAANET_END_NAMESPACE
