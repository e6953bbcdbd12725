#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Graph is a tape: every primitive evaluates eagerly when recorded and
// appends a node holding its value and a backward rule. Parameters are leaves
// bound by name from a ParamStore; only trainable leaves receive gradients.
// One Graph is used by one thread; distinct graphs share nothing mutable.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "expres/tensor.hpp"

namespace expres {

// Named leaf tensors, each flagged trainable or frozen. Iteration order is by name.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    bool trainable = false;
  };

  void add(const std::string& name, Tensor value, bool trainable);
  void add_all(const TensorMap& tensors, bool trainable);
  // Replaces the value; dims must match the existing entry.
  void assign(const std::string& name, Tensor value);
  void erase(const std::string& name);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& value(const std::string& name) const;
  Tensor& mutable_value(const std::string& name);
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::vector<std::string> frozen_names() const;
  TensorMap collect(bool trainable) const;
  std::size_t parameter_count(bool trainable) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  const Entry& entry(const std::string& name) const;
  std::map<std::string, Entry> entries_;
};

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  explicit Graph(const ParamStore& params, bool grad_enabled = true)
      : params_(&params), grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf bound to a ParamStore entry; repeated calls return the same node.
  Var param(const std::string& name);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return node(v).value; }
  const Dims& dims(Var v) const { return node(v).value.dims(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const ParamStore* params() const { return params_; }

  // Labels recorded nodes for error messages, e.g. "layer1/attn/softmax#42".
  class Scope {
   public:
    Scope(Graph& g, std::string name) : g_(g) { g_.scopes_.push_back(std::move(name)); }
    ~Scope() { g_.scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
  };

  // Gradients of a scalar loss for the named trainable parameters. Frozen or
  // unknown names are contract errors; trainable parameters the loss does not
  // reach get zero gradients.
  TensorMap gradient(Var loss, const std::vector<std::string>& wrt);

  // Primitive plumbing. `record` validates finiteness and appends a node.
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward);
  void accumulate_grad(Var v, const Tensor& g);
  std::string next_label(const char* op) const;
  [[noreturn]] void shape_error(const char* op, const std::string& detail) const;

 private:
  struct Node {
    std::string label;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    std::string param_name;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  std::string scope_prefix() const;
  void run_backward(Var loss);

  const ParamStore* params_ = nullptr;
  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::map<std::string, std::uint32_t> bound_;
  std::vector<std::string> scopes_;
};

}  // namespace expres
