#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "imvc/autograd.hpp"
#include "imvc/rng.hpp"

namespace imvc {

/// Named trainable tensors plus the AdamW moment buffers that shadow them.
class ParamStore {
 public:
  /// Registers a new parameter. Names are unique within a store.
  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Var>& params() const { return params_; }
  std::size_t parameter_count() const;

  Tensor& first_moment(const std::string& name) { return m_.at(name); }
  Tensor& second_moment(const std::string& name) { return v_.at(name); }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }
  void increment_step() { ++step_; }

  void zero_grad();
  /// FNV-1a digest over names and parameter bytes; used to assert stage isolation.
  std::uint64_t digest() const;

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, Tensor> m_, v_;
  std::uint64_t step_ = 0;
};

enum class Activation { relu, gelu, identity };
enum class OutputActivation { identity, softmax, l2_normalize };

struct MlpSpec {
  /// widths.front() is the input width, widths.back() the output width.
  std::vector<std::size_t> widths;
  /// One entry per hidden layer (widths.size() - 2). Missing entries default to relu.
  std::vector<Activation> hidden;
  OutputActivation output = OutputActivation::identity;

  std::size_t in() const { return widths.front(); }
  std::size_t out() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  void validate() const;
};

Var apply(Activation a, const Var& x);

/// Dense layer y = x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias, bool he_init,
         Rng& rng);
  Var forward(const Var& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  Var weight_, bias_;
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = false;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, MlpSpec spec, Rng& rng);

  /// Checks input width and output finiteness.
  Var forward(const Var& x) const;
  const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
};

/// Cross-attention: queries from phi(query tokens), keys/values from tau(context tokens).
class AttentionBlock {
 public:
  AttentionBlock() = default;
  /// query_width/context_width are per-token input widths; width is the common projection width d.
  AttentionBlock(ParamStore& store, const std::string& name, std::size_t query_width, std::size_t context_width,
                 std::size_t width, Rng& rng);

  /// Single group: query h x d_q, context m x d_c -> h x d.
  Var forward(const Var& query, const Var& context) const;
  /// Batched: query (g*h) x d_q, context (g*m) x d_c, each group attends within itself.
  Var forward_grouped(const Var& query, const Var& context, std::size_t h, std::size_t m) const;

  std::size_t width() const { return width_; }

 private:
  Linear phi_, tau_, wq_, wk_, wv_;
  std::size_t width_ = 0;
};

}  // namespace imvc
