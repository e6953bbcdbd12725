#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/tasks.hpp"

namespace expres {

TensorMap init_head(std::size_t in, std::size_t classes, std::size_t depth, std::uint64_t seed) {
  if (classes < 2) throw ContractError("head needs C >= 2");
  if (depth < 1) throw ContractError("head depth must be >= 1");
  Rng rng(derive_seed(seed, "head-init"));
  TensorMap head;
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    head.emplace("head.fc" + std::to_string(i) + ".W", trunc_normal_tensor({in, in}, 0.02f, rng));
    head.emplace("head.fc" + std::to_string(i) + ".b", Tensor::zeros({in}));
  }
  head.emplace("head.W", trunc_normal_tensor({in, classes}, 0.02f, rng));
  head.emplace("head.b", Tensor::zeros({classes}));
  return head;
}

Var apply_head(Graph& g, Var features, std::size_t depth) {
  Graph::Scope scope(g, "head");
  Var x = features;
  if (g.dims(x).size() == 1) x = ops::reshape(g, x, {1, g.dims(x)[0]});
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    const std::string p = "head.fc" + std::to_string(i);
    x = ops::gelu(g, ops::add_bias(g, ops::matmul(g, x, g.param(p + ".W")), g.param(p + ".b")));
  }
  return ops::add_bias(g, ops::matmul(g, x, g.param("head.W")), g.param("head.b"));
}

Tensor classify(const Tensor& y, const Tensor& w, const Tensor& b) {
  if (y.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.dim(0) != y.dim(0) || w.dim(1) != b.dim(0)) {
    throw ShapeError("classify: y " + to_string(y.dims()) + ", W " + to_string(w.dims()) + ", b " +
                     to_string(b.dims()));
  }
  Tensor logits = matmul(y.reshaped({1, y.dim(0)}), w);
  for (std::size_t c = 0; c < b.size(); ++c) logits[c] += b[c];
  return logits.reshaped({b.size()});
}

}  // namespace expres
