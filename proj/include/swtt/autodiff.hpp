#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "swtt/tensor.hpp"

namespace swtt {

struct Node;

// Handle to a value in the computation graph. Leaves created with
// requires_grad = true are trainable parameters; their gradient buffers
// accumulate across backward() calls until zero_grad().
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const;
    // Mutable access for optimizers and checkpoint loading. Never call while a
    // tape that references this var is alive.
    Tensor& mutable_value();
    const Shape& shape() const { return value().shape(); }

    bool requires_grad() const;
    bool has_grad() const;
    const Tensor& grad() const;
    void zero_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend Var make_op_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward,
                              const char* op_name);
    friend Var make_op_result(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward,
                              const char* op_name);

    std::shared_ptr<Node> node_;
};

struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    std::function<void(Node&)> backward;

    void accumulate(std::span<const double> g);
    Tensor& grad_buffer();
};

// Ordered record of ops on the current thread. Constructing a Tape makes it the
// active recorder for this thread; the destructor restores the previous one.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::shared_ptr<Node> node);
    std::size_t size() const { return ops_.size(); }

    // Reverse-mode sweep from a scalar loss. Leaf gradients accumulate;
    // intermediate gradients are recomputed on every call.
    void backward(const Var& loss);

    static Tape* active();

private:
    std::vector<std::shared_ptr<Node>> ops_;
    Tape* previous_ = nullptr;
};

// Creates an op result, recording it on the active tape when any input needs a
// gradient. Checks the value for non-finite entries and names the op if so.
Var make_op_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward,
                   const char* op_name);
Var make_op_result(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward,
                   const char* op_name);

enum class Precision { Double, Single };

// While a Single scope is active every op rounds its output to binary32; the
// double-precision head opens a nested Double scope.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p);
    ~PrecisionScope();
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

    static Precision current();

private:
    Precision previous_;
};

// Counts floating-point operations issued by the matmul and attention kernels
// (2 per multiply-add). Thread-local.
struct FlopCounter {
    static std::uint64_t value();
    static void reset();
    static void add(std::uint64_t flops);
};

}  // namespace swtt
