#ifndef VPRG_PARAMS_HPP_
#define VPRG_PARAMS_HPP_

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vprg/autograd.hpp"

namespace vprg {

// Named list of learnable tensors. Order of registration is the canonical
// order for the optimizer and for checkpoints.
struct ParamRegistry {
  std::vector<std::pair<std::string, ad::Var>> items;

  void add(const std::string& name, const ad::Var& v);
  const ad::Var& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t total_scalars() const;
};

Tensor init_uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double limit);
Tensor init_xavier(std::vector<std::size_t> shape, std::mt19937_64& rng);
Tensor init_normal(std::vector<std::size_t> shape, std::mt19937_64& rng, double sigma);

}  // namespace vprg

#endif  // VPRG_PARAMS_HPP_
