#pragma once

// Visual/spatial token pipeline.
//
// Visual tokens come from a trainable MLP over view-frame features. Spatial
// grid and global tokens come from a frozen random projection of the
// canonical geometry and never require gradients. Fusion projects the grid
// tokens, lets visual tokens attend to them, adds the result through a
// channel-wise tanh gate and refines with a residual MLP. Gate and MLP output
// layer start at zero, so the fused tokens equal the visual tokens exactly
// until the first update. Global tokens are appended after fusion.
//
// Parameter namespaces: "visual/", "spatial/" (frozen), "fusion/".

#include <cstddef>
#include <span>

#include "spatialrl/diff/parameters.hpp"
#include "spatialrl/diff/tensor.hpp"
#include "spatialrl/env/world.hpp"

namespace spatialrl::fusion {

struct FusionDims {
  std::size_t visual_tokens = 8;   // L
  std::size_t grid_tokens = 8;     // L_s
  std::size_t global_tokens = 2;   // G
  std::size_t channels = 32;       // C, shared by visual and spatial tokens
  std::size_t views = 2;
  std::size_t encoder_hidden = 64;
  std::size_t mlp_hidden = 64;
  double ln_eps = 1e-5;

  std::size_t fused_tokens() const { return visual_tokens + global_tokens; }
  // Throws std::invalid_argument on zero sizes or a non-positive epsilon.
  void validate() const;
};

// Batched tokens: visual [B, L, C], spatial_grid [B, L_s, C], spatial_global [B, G, C].
struct TokenSet {
  diff::Tensor visual;
  diff::Tensor spatial_grid;
  diff::Tensor spatial_global;
};

void init_encoder_params(diff::ParameterSet& params, const FusionDims& dims, const env::Geometry& geometry,
                         diff::Rng& rng);
void init_fusion_params(diff::ParameterSet& params, const FusionDims& dims, diff::Rng& rng);

TokenSet encode_tokens(std::span<const env::Observation> obs, const diff::ParameterSet& params,
                       const FusionDims& dims);

// LayerNorm(z W_proj + grid positions + view embedding). Throws
// std::out_of_range for an unknown view.
diff::Tensor project_spatial(const diff::Tensor& z, const diff::ParameterSet& params, const FusionDims& dims,
                             std::size_t view_id);

struct Attention {
  diff::Tensor output;   // [B, L, C]
  diff::Tensor weights;  // [B, L, L_s], rows sum to 1
};

// Single-head attention with queries from x and keys/values from z_proj.
Attention cross_attend(const diff::Tensor& x, const diff::Tensor& z_proj, const diff::ParameterSet& params,
                       const FusionDims& dims);

// h = x + tanh(gate) * LayerNorm(a); h += MLP(LayerNorm(h)).
diff::Tensor gated_fuse(const diff::Tensor& x, const diff::Tensor& a, const diff::ParameterSet& params,
                        const FusionDims& dims);

// [B, L + G, C]. With fusion disabled the visual tokens pass through and the
// global slots are zero.
diff::Tensor fuse(const TokenSet& tokens, const diff::ParameterSet& params, const FusionDims& dims,
                  std::size_t view_id, bool enabled = true);

}  // namespace spatialrl::fusion
