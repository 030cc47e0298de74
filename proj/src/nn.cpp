#include "biaslens/nn.hpp"

#include <cmath>

namespace biaslens {

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return Linear{Tensor::zeros(in, out), Tensor::zeros(1, out)};
}

Linear Linear::random(std::size_t in, std::size_t out, Rng& rng, double gain) {
  Linear l = zeros(in, out);
  const double stddev = gain / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.data()) w = stddev * rng.normal();
  return l;
}

Value Linear::forward(Graph& g, const Value& x) const {
  return g.add(g.matmul(x, g.param(weight)), g.param(bias));
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

void Linear::collect(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

}  // namespace biaslens
