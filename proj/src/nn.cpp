#include "imvc/nn.hpp"

#include <cmath>
#include <cstring>

#include "imvc/error.hpp"

namespace imvc {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  const auto shape = init.shape();
  Var v(std::move(init), true);
  params_.emplace(name, v);
  m_.emplace(name, Tensor(shape, 0.0));
  v_.emplace(name, Tensor(shape, 0.0));
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) {
    Var copy = p;
    copy.zero_grad();
  }
}

std::uint64_t ParamStore::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : params_) {
    mix(name.data(), name.size());
    mix(p.value().data().data(), p.value().size() * sizeof(double));
  }
  return h;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("MLP needs at least one layer");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("MLP layer widths must be positive");
  }
  if (hidden.size() > widths.size() - 2) throw ConfigError("more hidden activations than hidden layers");
}

Var apply(Activation a, const Var& x) {
  switch (a) {
    case Activation::relu:
      return ag::relu(x);
    case Activation::gelu:
      return ag::gelu(x);
    case Activation::identity:
      return x;
  }
  return x;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias, bool he_init,
               Rng& rng)
    : in_(in), out_(out), has_bias_(bias) {
  const double limit = he_init ? std::sqrt(6.0 / static_cast<double>(in))
                               : std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::matrix(in, out);
  for (double& x : w.data()) x = rng.uniform(-limit, limit);
  weight_ = store.add(name + ".weight", std::move(w));
  if (bias) bias_ = store.add(name + ".bias", Tensor::matrix(1, out));
}

Var Linear::forward(const Var& x) const {
  if (x.cols() != in_) {
    throw ShapeError("linear layer expects width " + std::to_string(in_) + ", got " + x.value().shape_str());
  }
  Var y = ag::matmul(x, weight_);
  return has_bias_ ? ag::add_row(y, bias_) : y;
}

Mlp::Mlp(ParamStore& store, const std::string& name, MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  spec_.hidden.resize(spec_.widths.size() - 2, Activation::relu);
  for (std::size_t l = 0; l < spec_.layers(); ++l) {
    const bool last = l + 1 == spec_.layers();
    const bool he = !last && spec_.hidden[l] != Activation::identity;
    layers_.emplace_back(store, name + "." + std::to_string(l), spec_.widths[l], spec_.widths[l + 1], true, he, rng);
  }
}

Var Mlp::forward(const Var& x) const {
  if (x.cols() != spec_.in()) {
    throw ShapeError("MLP expects input width " + std::to_string(spec_.in()) + ", got " + x.value().shape_str());
  }
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l].forward(h);
    if (l + 1 < layers_.size()) h = apply(spec_.hidden[l], h);
  }
  switch (spec_.output) {
    case OutputActivation::softmax:
      h = ag::softmax_rows(h);
      break;
    case OutputActivation::l2_normalize:
      h = ag::l2_normalize_rows(h);
      break;
    case OutputActivation::identity:
      break;
  }
  require_finite(h.value(), "MLP output");
  return h;
}

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& name, std::size_t query_width,
                               std::size_t context_width, std::size_t width, Rng& rng)
    : width_(width) {
  if (width == 0) throw ShapeError("attention width d must be positive");
  phi_ = Linear(store, name + ".phi", query_width, width, true, false, rng);
  tau_ = Linear(store, name + ".tau", context_width, width, true, false, rng);
  wq_ = Linear(store, name + ".wq", width, width, false, false, rng);
  wk_ = Linear(store, name + ".wk", width, width, false, false, rng);
  wv_ = Linear(store, name + ".wv", width, width, false, false, rng);
}

Var AttentionBlock::forward(const Var& query, const Var& context) const {
  return forward_grouped(query, context, query.rows(), context.rows());
}

Var AttentionBlock::forward_grouped(const Var& query, const Var& context, std::size_t h, std::size_t m) const {
  Var q = wq_.forward(phi_.forward(query));
  Var ctx = tau_.forward(context);
  return ag::grouped_attention(q, wk_.forward(ctx), wv_.forward(ctx), h, m);
}

}  // namespace imvc
