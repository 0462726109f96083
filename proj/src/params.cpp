#include "vprg/params.hpp"

#include <cmath>
#include <stdexcept>

namespace vprg {

void ParamRegistry::add(const std::string& name, const ad::Var& v) {
  if (contains(name)) throw std::invalid_argument("ParamRegistry: duplicate name " + name);
  items.emplace_back(name, v);
}

const ad::Var& ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  throw std::invalid_argument("ParamRegistry: no parameter named " + name);
}

bool ParamRegistry::contains(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return true;
  return false;
}

std::size_t ParamRegistry::total_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, v] : items) n += v.value().numel();
  return n;
}

Tensor init_uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double limit) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.vec()) v = dist(rng);
  return t;
}

Tensor init_xavier(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  if (shape.size() != 2) throw std::invalid_argument("init_xavier: rank-2 shape required");
  const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  return init_uniform(std::move(shape), rng, limit);
}

Tensor init_normal(std::vector<std::size_t> shape, std::mt19937_64& rng, double sigma) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& v : t.vec()) v = dist(rng);
  return t;
}

}  // namespace vprg
