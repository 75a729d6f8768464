// Copyright 2026 the smit authors
// SPDX-License-Identifier: Apache-2.0
#include "smit/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace smit {

namespace {
constexpr double kNegInf = -1e30;

int64_t raster3(int64_t z, int64_t y, int64_t x, int64_t g) { return (z * g + y) * g + x; }

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

std::string stage_pfx(size_t s) { return "s" + std::to_string(s) + "."; }
std::string block_pfx(size_t s, int64_t d) {
  return stage_pfx(s) + "b" + std::to_string(d) + ".";
}
}  // namespace

std::string to_string(DecoderKind k) {
  return k == DecoderKind::ONE_LAYER ? "ONE_LAYER" : "MULTI_LAYER";
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "ONE_LAYER") return DecoderKind::ONE_LAYER;
  if (s == "MULTI_LAYER") return DecoderKind::MULTI_LAYER;
  throw std::invalid_argument("unknown decoder kind: " + s);
}

void EncoderConfig::validate() const {
  if (view_size < 1 || patch_size < 1 || view_size % patch_size != 0)
    throw std::invalid_argument("encoder: patch size must divide view size");
  const size_t ns = embed_dims.size();
  if (ns == 0 || depths.size() != ns || num_heads.size() != ns || stage_merge.size() != ns)
    throw std::invalid_argument("encoder: embed_dims/depths/num_heads/stage_merge lengths differ");
  int64_t merge_product = 1;
  for (size_t s = 0; s < ns; ++s) {
    if (stage_merge[s] != 1 && stage_merge[s] != 2)
      throw std::invalid_argument("encoder: stage_merge entries must be 1 or 2");
    merge_product *= stage_merge[s];
    if (embed_dims[s] % num_heads[s] != 0)
      throw std::invalid_argument("encoder: heads must divide embed dim");
    if (stage_merge[s] == 1) {
      const int64_t prev = s == 0 ? embed_dims[0] : embed_dims[s - 1];
      if (embed_dims[s] != prev)
        throw std::invalid_argument("encoder: merge-free stage cannot change embed dim");
    }
  }
  if (merge_product != mask_grid_downsample)
    throw std::invalid_argument(
        "encoder: product of stage_merge factors must equal mask_grid_downsample");
  if (fine_grid() % mask_grid_downsample != 0)
    throw std::invalid_argument("encoder: mask grid must divide the token grid");
  if (final_grid() < 1) throw std::invalid_argument("encoder: empty final grid");
  const int64_t pe = p_eff();
  if ((pe & (pe - 1)) != 0) throw std::invalid_argument("encoder: p_eff must be a power of two");
  if (proj_dim_k < 2) throw std::invalid_argument("encoder: proj_dim_k must be >= 2");
  if (window < 1) throw std::invalid_argument("encoder: window must be >= 1");
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper_scale() {
  EncoderConfig c;
  c.view_size = 96;
  c.patch_size = 2;
  c.window = 4;
  c.embed_dims = {96, 192, 384, 768};
  c.depths = {2, 2, 18, 2};
  c.num_heads = {3, 6, 12, 24};
  c.stage_merge = {1, 2, 2, 2};
  c.mask_grid_downsample = 8;
  c.proj_dim_k = 4096;
  c.mlp_ratio = 4.0;
  return c;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> encoder_param_shapes(
    const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, std::vector<int64_t>>> out;
  const int64_t E0 = cfg.embed_dims[0];
  const int64_t p3 = cfg.patch_size * cfg.patch_size * cfg.patch_size;
  out.push_back({"embed.w", {E0, p3}});
  out.push_back({"embed.b", {E0}});
  out.push_back({"pos_z", {cfg.fine_grid(), E0}});
  out.push_back({"pos_y", {cfg.fine_grid(), E0}});
  out.push_back({"pos_x", {cfg.fine_grid(), E0}});
  out.push_back({"mask_token", {E0}});
  for (size_t s = 0; s < cfg.embed_dims.size(); ++s) {
    const int64_t C = cfg.embed_dims[s];
    const int64_t Cprev = s == 0 ? E0 : cfg.embed_dims[s - 1];
    const std::string sp = stage_pfx(s);
    if (cfg.stage_merge[s] == 2) {
      out.push_back({sp + "merge.w", {C, 8 * Cprev}});
      out.push_back({sp + "merge.b", {C}});
    }
    const auto hidden = static_cast<int64_t>(std::llround(cfg.mlp_ratio * static_cast<double>(C)));
    for (int64_t d = 0; d < cfg.depths[s]; ++d) {
      const std::string bp = block_pfx(s, d);
      out.push_back({bp + "ln1.gamma", {C}});
      out.push_back({bp + "ln1.beta", {C}});
      out.push_back({bp + "qkv.w", {3 * C, C}});
      out.push_back({bp + "qkv.b", {3 * C}});
      out.push_back({bp + "proj.w", {C, C}});
      out.push_back({bp + "proj.b", {C}});
      out.push_back({bp + "ln2.gamma", {C}});
      out.push_back({bp + "ln2.beta", {C}});
      out.push_back({bp + "mlp1.w", {hidden, C}});
      out.push_back({bp + "mlp1.b", {hidden}});
      out.push_back({bp + "mlp2.w", {C, hidden}});
      out.push_back({bp + "mlp2.b", {C}});
    }
  }
  const int64_t Cl = cfg.embed_dims.back();
  out.push_back({"final_norm.gamma", {Cl}});
  out.push_back({"final_norm.beta", {Cl}});
  out.push_back({"head_patch.w", {cfg.proj_dim_k, Cl}});
  out.push_back({"head_patch.b", {cfg.proj_dim_k}});
  out.push_back({"head_cls.w", {cfg.proj_dim_k, Cl}});
  out.push_back({"head_cls.b", {cfg.proj_dim_k}});
  const int64_t pe3 = cfg.p_eff() * cfg.p_eff() * cfg.p_eff();
  if (cfg.decoder_kind == DecoderKind::ONE_LAYER) {
    out.push_back({"head_pred.w", {pe3, Cl}});
    out.push_back({"head_pred.b", {pe3}});
  } else {
    int64_t cin = Cl;
    const auto n_up = static_cast<int64_t>(std::llround(std::log2(static_cast<double>(cfg.p_eff()))));
    for (int64_t i = 0; i < n_up; ++i) {
      const int64_t cout = std::max<int64_t>(1, Cl >> (i + 1));
      out.push_back({"head_pred.up" + std::to_string(i) + ".w", {cin, cout, 3, 3, 3}});
      out.push_back({"head_pred.up" + std::to_string(i) + ".b", {cout}});
      cin = cout;
    }
    out.push_back({"head_pred.out.w", {1, cin}});
    out.push_back({"head_pred.out.b", {1}});
  }
  return out;
}

void register_encoder_params(const EncoderConfig& cfg, ParamStore& store) {
  for (auto& [name, shape] : encoder_param_shapes(cfg)) store.create(name, shape);
}

int64_t encoder_param_count(const EncoderConfig& cfg) {
  int64_t n = 0;
  for (auto& [name, shape] : encoder_param_shapes(cfg)) n += Tensor::numel_of(shape);
  return n;
}

int64_t pred_head_param_count(const EncoderConfig& cfg, DecoderKind kind) {
  EncoderConfig c = cfg;
  c.decoder_kind = kind;
  int64_t n = 0;
  for (auto& [name, shape] : encoder_param_shapes(c))
    if (name.rfind("head_pred.", 0) == 0) n += Tensor::numel_of(shape);
  return n;
}

std::vector<std::string> ema_shared_names(const EncoderConfig& cfg) {
  std::vector<std::string> out;
  for (auto& [name, shape] : encoder_param_shapes(cfg)) {
    if (name == "mask_token" || name.rfind("head_pred.", 0) == 0) continue;
    out.push_back(name);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

Encoder::Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t fg = cfg_.fine_grid();

  for (int axis = 0; axis < 3; ++axis) {
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(cfg_.n_fine()));
    for (int64_t z = 0; z < fg; ++z)
      for (int64_t y = 0; y < fg; ++y)
        for (int64_t x = 0; x < fg; ++x)
          (*idx)[static_cast<size_t>(raster3(z, y, x, fg))] = axis == 0 ? z : (axis == 1 ? y : x);
    pos_idx_[axis] = idx;
  }

  int64_t grid = fg;
  for (size_t s = 0; s < cfg_.embed_dims.size(); ++s) {
    StagePlan sp;
    const int64_t grid_in = grid;
    grid = grid / cfg_.stage_merge[s];
    sp.grid = grid;
    sp.dim = cfg_.embed_dims[s];
    sp.heads = cfg_.num_heads[s];
    sp.win = std::min(cfg_.window, grid);
    sp.shift = sp.win < grid ? sp.win / 2 : 0;
    sp.grid_pad = ceil_div(grid, sp.win) * sp.win;
    const int64_t nw_axis = sp.grid_pad / sp.win;
    sp.n_win = nw_axis * nw_axis * nw_axis;
    sp.ws = sp.win * sp.win * sp.win;

    if (cfg_.stage_merge[s] == 2) {
      auto mi = std::make_shared<std::vector<int64_t>>();
      mi->reserve(static_cast<size_t>(grid * grid * grid * 8));
      for (int64_t z = 0; z < grid; ++z)
        for (int64_t y = 0; y < grid; ++y)
          for (int64_t x = 0; x < grid; ++x)
            for (int64_t dz = 0; dz < 2; ++dz)
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx)
                  mi->push_back(raster3(2 * z + dz, 2 * y + dy, 2 * x + dx, grid_in));
      sp.merge_idx = mi;
    }

    for (int v = 0; v < 2; ++v) {
      const int64_t sh = v == 1 ? sp.shift : 0;
      if (v == 1 && sp.shift == 0) break;
      auto part = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.n_win * sp.ws));
      auto unpart = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(grid * grid * grid));
      std::vector<uint8_t> valid(static_cast<size_t>(sp.n_win * sp.ws), 0);
      std::vector<int> key(static_cast<size_t>(sp.n_win * sp.ws), 0);
      auto axis_key = [&](int64_t c) -> int {
        if (sp.grid_pad == sp.win) return 0;
        if (c < sp.grid_pad - sp.win) return 0;
        if (c < sp.grid_pad - sh) return 1;
        return 2;
      };
      for (int64_t wz = 0; wz < nw_axis; ++wz)
        for (int64_t wy = 0; wy < nw_axis; ++wy)
          for (int64_t wx = 0; wx < nw_axis; ++wx) {
            const int64_t w = raster3(wz, wy, wx, nw_axis);
            for (int64_t tz = 0; tz < sp.win; ++tz)
              for (int64_t ty = 0; ty < sp.win; ++ty)
                for (int64_t tx = 0; tx < sp.win; ++tx) {
                  const int64_t row = w * sp.ws + raster3(tz, ty, tx, sp.win);
                  const int64_t pz = wz * sp.win + tz, py = wy * sp.win + ty, px = wx * sp.win + tx;
                  const int64_t oz = (pz + sh) % sp.grid_pad;
                  const int64_t oy = (py + sh) % sp.grid_pad;
                  const int64_t ox = (px + sh) % sp.grid_pad;
                  key[static_cast<size_t>(row)] =
                      (axis_key(pz) * 3 + axis_key(py)) * 3 + axis_key(px);
                  if (oz < grid && oy < grid && ox < grid) {
                    const int64_t src = raster3(oz, oy, ox, grid);
                    (*part)[static_cast<size_t>(row)] = src;
                    (*unpart)[static_cast<size_t>(src)] = row;
                    valid[static_cast<size_t>(row)] = 1;
                  } else {
                    (*part)[static_cast<size_t>(row)] = -1;
                  }
                }
          }
      sp.part[v] = part;
      sp.unpart[v] = unpart;
      const bool needs_mask = sh > 0 || sp.grid_pad != grid;
      if (needs_mask) {
        auto mask = std::make_shared<Tensor>(
            std::vector<int64_t>{sp.n_win * sp.heads * sp.ws, sp.ws});
        for (int64_t w = 0; w < sp.n_win; ++w)
          for (int64_t i = 0; i < sp.ws; ++i)
            for (int64_t j = 0; j < sp.ws; ++j) {
              const bool ok = valid[static_cast<size_t>(w * sp.ws + j)] &&
                              key[static_cast<size_t>(w * sp.ws + i)] ==
                                  key[static_cast<size_t>(w * sp.ws + j)];
              if (!ok)
                for (int64_t h = 0; h < sp.heads; ++h)
                  mask->data[static_cast<size_t>(((w * sp.heads + h) * sp.ws + i) * sp.ws + j)] =
                      kNegInf;
            }
        sp.attn_mask[v] = mask;
      }
    }

    const int64_t C = sp.dim, H = sp.heads, dh = C / H;
    auto qi = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.n_win * sp.ws * C));
    auto ki = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.n_win * sp.ws * C));
    auto vi = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.n_win * sp.ws * C));
    auto hm = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.n_win * sp.ws * C));
    for (int64_t w = 0; w < sp.n_win; ++w)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < sp.ws; ++t)
          for (int64_t c = 0; c < dh; ++c) {
            const int64_t dst = (((w * H + h) * sp.ws) + t) * dh + c;
            const int64_t src_row = w * sp.ws + t;
            (*qi)[static_cast<size_t>(dst)] = src_row * 3 * C + 0 * C + h * dh + c;
            (*ki)[static_cast<size_t>(dst)] = src_row * 3 * C + 1 * C + h * dh + c;
            (*vi)[static_cast<size_t>(dst)] = src_row * 3 * C + 2 * C + h * dh + c;
            (*hm)[static_cast<size_t>(src_row * C + h * dh + c)] = dst;
          }
    sp.q_idx = qi;
    sp.k_idx = ki;
    sp.v_idx = vi;
    sp.head_merge = hm;
    plan_.push_back(std::move(sp));
  }

  // Volume (S^3) -> per-final-token voxel blocks, for the multi-layer decoder.
  const int64_t S = cfg_.view_size, g = cfg_.final_grid(), pe = cfg_.p_eff();
  auto up = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(S * S * S));
  int64_t dst = 0;
  for (int64_t gz = 0; gz < g; ++gz)
    for (int64_t gy = 0; gy < g; ++gy)
      for (int64_t gx = 0; gx < g; ++gx)
        for (int64_t pz = 0; pz < pe; ++pz)
          for (int64_t py = 0; py < pe; ++py)
            for (int64_t px = 0; px < pe; ++px)
              (*up)[static_cast<size_t>(dst++)] =
                  raster3(gz * pe + pz, gy * pe + py, gx * pe + px, S);
  pred_unpatch_ = up;
}

namespace {
Var P(Graph& g, const ParamsRef& p, const std::string& name) {
  return g.param(p.prefix + name, p.store->at(p.prefix + name), p.trainable);
}
}  // namespace

Var Encoder::attention_block(Graph& g, Var x, const StagePlan& s, int64_t block_index,
                             const std::string& pfx, const ParamsRef& p) const {
  const int64_t C = s.dim, H = s.heads, dh = C / H;
  const int v = (block_index % 2 == 1 && s.shift > 0) ? 1 : 0;
  Var h = layernorm(x, P(g, p, pfx + "ln1.gamma"), P(g, p, pfx + "ln1.beta"), C);
  Var win = gather_rows(h, s.part[v], C);
  Var qkv = linear(win, P(g, p, pfx + "qkv.w"), P(g, p, pfx + "qkv.b"));
  Var q = permute_elements(qkv, s.q_idx, {s.n_win * H, s.ws, dh});
  Var k = permute_elements(qkv, s.k_idx, {s.n_win * H, s.ws, dh});
  Var vv = permute_elements(qkv, s.v_idx, {s.n_win * H, s.ws, dh});
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(dh)));
  Var scores = bmm_nt(q, k, s.n_win * H, s.ws, dh, s.ws);
  Var probs = softmax_rows(scores, s.ws, s.attn_mask[v]);
  Var ctx = bmm_nn(probs, vv, s.n_win * H, s.ws, s.ws, dh);
  Var merged = permute_elements(ctx, s.head_merge, {s.n_win * s.ws, C});
  Var proj = linear(merged, P(g, p, pfx + "proj.w"), P(g, p, pfx + "proj.b"));
  Var back = gather_rows(proj, s.unpart[v], C);
  Var x1 = add(x, back);
  Var h2 = layernorm(x1, P(g, p, pfx + "ln2.gamma"), P(g, p, pfx + "ln2.beta"), C);
  Var m = linear(h2, P(g, p, pfx + "mlp1.w"), P(g, p, pfx + "mlp1.b"));
  m = gelu(m);
  m = linear(m, P(g, p, pfx + "mlp2.w"), P(g, p, pfx + "mlp2.b"));
  return add(x1, m);
}

EncoderFeatures Encoder::forward(Graph& g, const View& view,
                                 const std::vector<uint8_t>* fine_row_mask,
                                 const ParamsRef& p) const {
  if (view.size != cfg_.view_size) throw std::invalid_argument("encoder: view size mismatch");
  Var patches = g.constant(patchify(view, cfg_.patch_size));
  Var x = linear(patches, P(g, p, "embed.w"), P(g, p, "embed.b"));
  if (fine_row_mask != nullptr) {
    if (static_cast<int64_t>(fine_row_mask->size()) != cfg_.n_fine())
      throw std::invalid_argument("encoder: mask length must match the token grid");
    x = apply_mask(x, *fine_row_mask, P(g, p, "mask_token"));
  }
  x = add_rows_embed(x, P(g, p, "pos_z"), pos_idx_[0]);
  x = add_rows_embed(x, P(g, p, "pos_y"), pos_idx_[1]);
  x = add_rows_embed(x, P(g, p, "pos_x"), pos_idx_[2]);

  EncoderFeatures out;
  out.fine = x;
  int64_t Cprev = cfg_.embed_dims[0];
  for (size_t s = 0; s < plan_.size(); ++s) {
    const StagePlan& sp = plan_[s];
    if (cfg_.stage_merge[s] == 2) {
      Var cat = gather_rows_concat(x, sp.merge_idx, 8, Cprev);
      x = linear(cat, P(g, p, stage_pfx(s) + "merge.w"), P(g, p, stage_pfx(s) + "merge.b"));
    }
    for (int64_t d = 0; d < cfg_.depths[s]; ++d) x = attention_block(g, x, sp, d, block_pfx(s, d), p);
    out.stages.push_back(x);
    Cprev = sp.dim;
  }
  out.tokens = layernorm(x, P(g, p, "final_norm.gamma"), P(g, p, "final_norm.beta"),
                         cfg_.embed_dims.back());
  out.global = mean_rows(out.tokens);
  return out;
}

Var Encoder::project_patch(Graph& g, Var tokens, const ParamsRef& p) const {
  return linear(tokens, P(g, p, "head_patch.w"), P(g, p, "head_patch.b"));
}

Var Encoder::project_cls(Graph& g, Var global, const ParamsRef& p) const {
  return linear(global, P(g, p, "head_cls.w"), P(g, p, "head_cls.b"));
}

Var Encoder::predict_pixels(Graph& g, Var tokens, const ParamsRef& p) const {
  if (cfg_.decoder_kind == DecoderKind::ONE_LAYER)
    return linear(tokens, P(g, p, "head_pred.w"), P(g, p, "head_pred.b"));
  const int64_t gsz = cfg_.final_grid();
  int64_t C = cfg_.embed_dims.back();
  Var x = transpose2d(tokens, cfg_.n_final(), C);  // (C, g^3) volume layout
  int64_t D = gsz;
  const auto n_up = static_cast<int64_t>(std::llround(std::log2(static_cast<double>(cfg_.p_eff()))));
  for (int64_t i = 0; i < n_up; ++i) {
    const int64_t cout = std::max<int64_t>(1, cfg_.embed_dims.back() >> (i + 1));
    const std::string nm = "head_pred.up" + std::to_string(i) + ".";
    x = conv_transpose3x(x, P(g, p, nm + "w"), P(g, p, nm + "b"), C, cout, D, D, D);
    x = gelu(x);
    C = cout;
    D *= 2;
  }
  x = conv1x1(x, P(g, p, "head_pred.out.w"), P(g, p, "head_pred.out.b"), C, 1, D * D * D);
  return permute_elements(x, pred_unpatch_, {cfg_.n_final(), cfg_.p_eff() * cfg_.p_eff() * cfg_.p_eff()});
}

}  // namespace smit
