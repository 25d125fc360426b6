#include "swtt/autodiff.hpp"

#include <algorithm>

#include "swtt/errors.hpp"

namespace swtt {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local Precision g_precision = Precision::Double;
thread_local std::uint64_t g_flops = 0;

const Tensor& empty_tensor() {
    static const Tensor t;
    return t;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->is_leaf = true;
}

const Tensor& Var::value() const {
    if (!node_) throw UsageError("access to undefined Var");
    return node_->value;
}

Tensor& Var::mutable_value() {
    if (!node_) throw UsageError("access to undefined Var");
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

bool Var::has_grad() const { return node_ && !node_->grad.empty(); }

const Tensor& Var::grad() const {
    if (!node_ || node_->grad.empty()) return empty_tensor();
    return node_->grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

void Node::accumulate(std::span<const double> g) {
    Tensor& buf = grad_buffer();
    double* d = buf.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<Node> node) { ops_.push_back(std::move(node)); }

void Tape::backward(const Var& loss) {
    if (!loss.defined() || loss.value().size() != 1) {
        throw UsageError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.value().shape()) : std::string("<undefined>")));
    }
    if (ops_.empty()) throw UsageError("backward() on an empty tape");
    for (auto& n : ops_) n->grad = Tensor();
    Node* root = loss.node();
    if (root->is_leaf) {
        root->accumulate(std::vector<double>{1.0});
        return;
    }
    root->grad_buffer()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.empty() || !n.backward) continue;
        n.backward(n);
    }
}

Var make_op_result(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward,
                   const char* op_name) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs_grad = false;
    if (g_active_tape != nullptr) {
        needs_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    }
    if (g_precision == Precision::Single) {
        for (double& v : node->value.data()) v = static_cast<double>(static_cast<float>(v));
    }
    if (!node->value.all_finite()) {
        throw NumericError(std::string("non-finite output in op '") + op_name + "'");
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->backward = std::move(backward);
        g_active_tape->record(node);
    }
    return Var(std::move(node));
}

Var make_op_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward,
                   const char* op_name) {
    return make_op_result(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward),
                          op_name);
}

PrecisionScope::PrecisionScope(Precision p) : previous_(g_precision) { g_precision = p; }

PrecisionScope::~PrecisionScope() { g_precision = previous_; }

Precision PrecisionScope::current() { return g_precision; }

std::uint64_t FlopCounter::value() { return g_flops; }

void FlopCounter::reset() { g_flops = 0; }

void FlopCounter::add(std::uint64_t flops) { g_flops += flops; }

}  // namespace swtt
