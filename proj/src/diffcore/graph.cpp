#include "expres/graph.hpp"

#include "expres/errors.hpp"
#include "expres/kernels.hpp"

namespace expres {

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw ContractError("parameter '" + name + "' already exists");
  entries_.emplace(name, Entry{std::move(value), trainable});
}

void ParamStore::add_all(const TensorMap& tensors, bool trainable) {
  for (const auto& [name, t] : tensors) add(name, t, trainable);
}

void ParamStore::assign(const std::string& name, Tensor value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  if (it->second.value.dims() != value.dims()) {
    throw ShapeError("parameter '" + name + "' has dims " + to_string(it->second.value.dims()) +
                     ", cannot assign " + to_string(value.dims()));
  }
  it->second.value = std::move(value);
}

void ParamStore::erase(const std::string& name) { entries_.erase(name); }

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }

Tensor& ParamStore::mutable_value(const std::string& name) { return const_cast<Entry&>(entry(name)).value; }

bool ParamStore::trainable(const std::string& name) const { return entry(name).trainable; }

void ParamStore::set_trainable(const std::string& name, bool trainable) {
  const_cast<Entry&>(entry(name)).trainable = trainable;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::frozen_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (!e.trainable) out.push_back(name);
  return out;
}

TensorMap ParamStore::collect(bool trainable) const {
  TensorMap out;
  for (const auto& [name, e] : entries_)
    if (e.trainable == trainable) out.emplace(name, e.value);
  return out;
}

std::size_t ParamStore::parameter_count(bool trainable) const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.trainable == trainable) n += e.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Graph

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("invalid graph variable");
  return nodes_[v.id];
}

Graph::Node& Graph::node(Var v) {
  if (v.id >= nodes_.size()) throw ContractError("invalid graph variable");
  return nodes_[v.id];
}

std::string Graph::scope_prefix() const {
  std::string s;
  for (const auto& part : scopes_) {
    s += part;
    s += '/';
  }
  return s;
}

std::string Graph::next_label(const char* op) const {
  return scope_prefix() + op + "#" + std::to_string(nodes_.size());
}

void Graph::shape_error(const char* op, const std::string& detail) const {
  throw ShapeError("node '" + next_label(op) + "': " + detail);
}

Var Graph::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var{it->second};
  if (!params_) throw ContractError("graph has no parameter store; cannot bind '" + name + "'");
  if (!params_->contains(name)) throw ContractError("unknown parameter '" + name + "'");
  Node n;
  n.label = "param:" + name;
  n.value = params_->value(name);
  n.requires_grad = grad_enabled_ && params_->trainable(name);
  n.param_name = name;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  bound_.emplace(name, id);
  return Var{id};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.label = next_label("const");
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.label = next_label(op);
  if (!value.all_finite()) throw NumericError("non-finite value produced by node '" + n.label + "'");
  n.value = std::move(value);
  if (grad_enabled_) {
    for (Var in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::accumulate_grad(Var v, const Tensor& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw ShapeError("gradient for node '" + n.label + "' has dims " + to_string(g.dims()) + ", expected " +
                     to_string(n.value.dims()));
  }
  if (!n.has_grad) {
    n.grad = Tensor(n.value.dims(), std::vector<float>(g.values().begin(), g.values().end()));
    n.has_grad = true;
  } else {
    kernels::accumulate(g.data(), n.grad.data(), g.size());
  }
}

void Graph::run_backward(Var loss) {
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& root = node(loss);
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.dims(), 1.0f);
  root.has_grad = true;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The closure may append to nothing but may touch other nodes; copy the grad out first.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

TensorMap Graph::gradient(Var loss, const std::vector<std::string>& wrt) {
  if (node(loss).value.size() != 1) {
    throw ContractError("gradient: loss node '" + node(loss).label + "' is not scalar (dims " +
                        to_string(node(loss).value.dims()) + ")");
  }
  if (!grad_enabled_) throw ContractError("gradient: graph was built with gradients disabled");
  for (const auto& name : wrt) {
    if (!params_ || !params_->contains(name)) {
      throw ContractError("gradient: '" + name + "' is not a parameter leaf");
    }
    if (!params_->trainable(name)) {
      throw ContractError("gradient: '" + name + "' is frozen and cannot be differentiated");
    }
  }
  run_backward(loss);
  TensorMap out;
  for (const auto& name : wrt) {
    auto it = bound_.find(name);
    if (it != bound_.end() && nodes_[it->second].has_grad) {
      out.emplace(name, nodes_[it->second].grad);
    } else {
      out.emplace(name, Tensor::zeros(params_->value(name).dims()));
    }
  }
  return out;
}

}  // namespace expres
