#include "spatialrl/fusion/fusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spatialrl/diff/ops.hpp"

namespace spatialrl::fusion {

using diff::Tensor;

void FusionDims::validate() const {
  if (visual_tokens == 0 || grid_tokens == 0 || channels == 0 || views == 0 || encoder_hidden == 0 ||
      mlp_hidden == 0) {
    throw std::invalid_argument("FusionDims: token counts and widths must be positive");
  }
  if (!(ln_eps > 0.0)) throw std::invalid_argument("FusionDims: ln_eps must be > 0");
}

void init_encoder_params(diff::ParameterSet& params, const FusionDims& dims, const env::Geometry& geometry,
                         diff::Rng& rng) {
  dims.validate();
  const std::size_t features = env::feature_dim(geometry);
  const std::size_t canonical = env::canonical_dim(geometry);
  const std::size_t c = dims.channels;
  params.add_glorot("visual/w1", features, dims.encoder_hidden, rng);
  params.add_zeros("visual/b1", {dims.encoder_hidden});
  params.add_glorot("visual/w2", dims.encoder_hidden, dims.visual_tokens * c, rng);
  params.add_zeros("visual/b2", {dims.visual_tokens * c});
  params.add_glorot("spatial/w", canonical, (dims.grid_tokens + dims.global_tokens) * c, rng, false);
  params.add_glorot("spatial/b", 1, (dims.grid_tokens + dims.global_tokens) * c, rng, false);
}

void init_fusion_params(diff::ParameterSet& params, const FusionDims& dims, diff::Rng& rng) {
  dims.validate();
  const std::size_t c = dims.channels;
  params.add_glorot("fusion/proj_w", c, c, rng);
  params.add_glorot("fusion/grid_pos", dims.grid_tokens, c, rng);
  params.add_glorot("fusion/view_embed", dims.views, c, rng);
  params.add_glorot("fusion/query_w", c, c, rng);
  params.add_glorot("fusion/key_w", c, c, rng);
  params.add_glorot("fusion/value_w", c, c, rng);
  params.add_glorot("fusion/out_w", c, c, rng);
  params.add_zeros("fusion/gate", {c});
  params.add_glorot("fusion/mlp_w1", c, dims.mlp_hidden, rng);
  params.add_zeros("fusion/mlp_b1", {dims.mlp_hidden});
  params.add_zeros("fusion/mlp_w2", {dims.mlp_hidden, c});
  params.add_zeros("fusion/mlp_b2", {c});
}

TokenSet encode_tokens(std::span<const env::Observation> obs, const diff::ParameterSet& params,
                       const FusionDims& dims) {
  if (obs.empty()) throw std::invalid_argument("encode_tokens: empty observation batch");
  const std::size_t b = obs.size();
  const std::size_t f = obs.front().features.size();
  const std::size_t g = obs.front().canonical_geometry.size();
  std::vector<double> feat;
  std::vector<double> geom;
  feat.reserve(b * f);
  geom.reserve(b * g);
  for (const auto& o : obs) {
    if (o.features.size() != f || o.canonical_geometry.size() != g) {
      throw std::invalid_argument("encode_tokens: inconsistent observation sizes in batch");
    }
    feat.insert(feat.end(), o.features.begin(), o.features.end());
    geom.insert(geom.end(), o.canonical_geometry.begin(), o.canonical_geometry.end());
  }
  const std::size_t c = dims.channels;
  const Tensor x_in = Tensor::from({b, f}, std::move(feat));
  const Tensor hidden = diff::tanh(diff::linear(x_in, params.get("visual/w1"), params.get("visual/b1")));
  const Tensor visual = diff::linear(hidden, params.get("visual/w2"), params.get("visual/b2"));

  // The spatial branch is computed from constants only and carries no graph.
  const Tensor z_in = Tensor::from({b, g}, std::move(geom));
  const Tensor& sw = params.get("spatial/w");
  const Tensor sb = diff::reshape(params.get("spatial/b").detach(), {sw.dim(1)});
  const Tensor z = diff::tanh(diff::linear(z_in, sw.detach(), sb));
  const Tensor z3 = diff::reshape(z, {b, dims.grid_tokens + dims.global_tokens, c});

  TokenSet out;
  out.visual = diff::reshape(visual, {b, dims.visual_tokens, c});
  out.spatial_grid = diff::slice(z3, 1, 0, dims.grid_tokens);
  out.spatial_global = diff::slice(z3, 1, dims.grid_tokens, dims.grid_tokens + dims.global_tokens);
  return out;
}

Tensor project_spatial(const Tensor& z, const diff::ParameterSet& params, const FusionDims& dims,
                       std::size_t view_id) {
  if (view_id >= dims.views) {
    throw std::out_of_range("project_spatial: view " + std::to_string(view_id) + " not in [0, " +
                            std::to_string(dims.views) + ")");
  }
  const Tensor view = diff::reshape(diff::slice(params.get("fusion/view_embed"), 0, view_id, view_id + 1),
                                    {dims.channels});
  const Tensor projected = diff::matmul(z.detach(), params.get("fusion/proj_w"));
  return diff::layer_norm(projected + params.get("fusion/grid_pos") + view, dims.ln_eps);
}

Attention cross_attend(const Tensor& x, const Tensor& z_proj, const diff::ParameterSet& params,
                       const FusionDims& dims) {
  const Tensor q = diff::matmul(x, params.get("fusion/query_w"));
  const Tensor k = diff::matmul(z_proj, params.get("fusion/key_w"));
  const Tensor v = diff::matmul(z_proj, params.get("fusion/value_w"));
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(dims.channels));
  Attention out;
  out.weights = diff::softmax(diff::scale(diff::matmul(q, diff::transpose(k)), inv_sqrt_c));
  out.output = diff::matmul(diff::matmul(out.weights, v), params.get("fusion/out_w"));
  return out;
}

Tensor gated_fuse(const Tensor& x, const Tensor& a, const diff::ParameterSet& params, const FusionDims& dims) {
  const Tensor gate = diff::tanh(params.get("fusion/gate"));
  const Tensor h = x + gate * diff::layer_norm(a, dims.ln_eps);
  const Tensor hidden = diff::tanh(
      diff::linear(diff::layer_norm(h, dims.ln_eps), params.get("fusion/mlp_w1"), params.get("fusion/mlp_b1")));
  return h + diff::linear(hidden, params.get("fusion/mlp_w2"), params.get("fusion/mlp_b2"));
}

Tensor fuse(const TokenSet& tokens, const diff::ParameterSet& params, const FusionDims& dims, std::size_t view_id,
            bool enabled) {
  if (!enabled) {
    const Tensor parts[] = {tokens.visual,
                            Tensor::zeros({tokens.visual.dim(0), dims.global_tokens, dims.channels})};
    return diff::concat(parts, 1);
  }
  const Tensor z_proj = project_spatial(tokens.spatial_grid, params, dims, view_id);
  const Attention att = cross_attend(tokens.visual, z_proj, params, dims);
  const Tensor h = gated_fuse(tokens.visual, att.output, params, dims);
  const Tensor parts[] = {h, tokens.spatial_global.detach()};
  return diff::concat(parts, 1);
}

}  // namespace spatialrl::fusion
