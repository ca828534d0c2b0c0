// The finite-difference suite behind `refsr gradcheck` and the acceptance run.
// Each check draws fresh random operands per instance; bilinear and affine
// sampling positions are kept off integer coordinates where the kernels kink.

#include <random>

#include "refsr/fusion.hpp"
#include "refsr/gradcheck.hpp"
#include "refsr/losses.hpp"
#include "refsr/model.hpp"
#include "refsr/warp.hpp"

namespace refsr::gradcheck {

namespace {

constexpr double kKernelTolerance = 1e-4;
constexpr double kCompositeTolerance = 1e-3;

ConvLayer<double> random_layer(int in, int out, std::mt19937_64& rng, int k = 3) {
  ConvLayer<double> l(in, out, k);
  l.init_uniform(rng);
  return l;
}

ConvStack<double> random_stack(std::initializer_list<int> widths, std::mt19937_64& rng) {
  ConvStack<double> s;
  const std::vector<int> w(widths);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) s.layers.push_back(random_layer(w[i], w[i + 1], rng));
  return s;
}

double fractional(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  double v = u(rng);
  while (std::abs(v - std::round(v)) < 0.05) v = u(rng);
  return v;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double check_conv_stack(ConvStack<double>& s, const ConvStack<double>& grads, const std::function<double()>& loss,
                        std::mt19937_64& rng, std::size_t count = 8) {
  double worst = 0.0;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    worst = std::max(worst, probe_tensor(s.layers[l].weight, grads.layers[l].weight, loss, rng, count));
    worst = std::max(worst, probe(s.layers[l].bias, grads.layers[l].bias, loss,
                                  sample_indices(s.layers[l].bias.size(), 2, rng)));
  }
  return worst;
}

// --- primitive kernels -----------------------------------------------------

double conv_instance(std::mt19937_64& rng) {
  TensorD in = random_tensor(Shape{2, 3, 8, 8}, rng);
  TensorD w = random_tensor(Shape{4, 3, 3, 3}, rng);
  std::vector<double> bias = random_vector(4, rng);
  const TensorD up = random_tensor(Shape{2, 4, 8, 8}, rng);
  auto loss = [&] { return weighted_sum(conv2d(in, w, bias), up); };
  const ConvGrads<double> g = conv2d_backward(in, w, up);
  double worst = probe_tensor(in, g.input, loss, rng);
  worst = std::max(worst, probe_tensor(w, g.weight, loss, rng));
  return std::max(worst, probe(bias, g.bias, loss, sample_indices(4, 4, rng)));
}

double bicubic_instance(std::mt19937_64& rng, Resample mode) {
  TensorD in = random_tensor(Shape{1, 2, 6, 8}, rng);
  const TensorD up = random_tensor(bicubic_resize(in, mode).shape(), rng);
  return probe_tensor(in, bicubic_resize_backward(up, mode, in.shape()),
                      [&] { return weighted_sum(bicubic_resize(in, mode), up); }, rng);
}

double blur_instance(std::mt19937_64& rng) {
  const double sigma = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
  TensorD in = random_tensor(Shape{1, 3, 7, 6}, rng);
  const TensorD up = random_tensor(in.shape(), rng);
  return probe_tensor(in, gaussian_blur3x3_backward(up, sigma),
                      [&] { return weighted_sum(gaussian_blur3x3(in, sigma), up); }, rng);
}

double grid_sample_instance(std::mt19937_64& rng) {
  TensorD in = random_tensor(Shape{1, 3, 6, 7}, rng);
  TensorD grid(Shape{1, 2, 5, 4});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x) {
      grid(0, 0, y, x) = fractional(rng, 0.1, 5.9);
      grid(0, 1, y, x) = fractional(rng, 0.1, 4.9);
    }
  const TensorD up = random_tensor(Shape{1, 3, 5, 4}, rng);
  auto loss = [&] { return weighted_sum(grid_sample_bilinear(in, grid), up); };
  const GridSampleGrads<double> g = grid_sample_bilinear_backward(in, grid, up);
  return std::max(probe_tensor(in, g.input, loss, rng), probe_tensor(grid, g.grid, loss, rng));
}

double bilinear_up_instance(std::mt19937_64& rng) {
  TensorD in = random_tensor(Shape{1, 2, 5, 6}, rng);
  const TensorD up = random_tensor(Shape{1, 2, 10, 12}, rng);
  return probe_tensor(in, bilinear_upsample2_backward(up, in.shape()),
                      [&] { return weighted_sum(bilinear_upsample2(in), up); }, rng);
}

double unfold_instance(std::mt19937_64& rng, const PatchGeometry& geom) {
  TensorD in = random_tensor(Shape{1, 2, 8, 6}, rng);
  const PatchMatrix<double> probe_rows = unfold_patches(in, geom);
  PatchMatrix<double> w(probe_rows.rows(), probe_rows.cols());
  std::uniform_real_distribution<double> u(-1, 1);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  auto loss = [&] { return (unfold_patches(in, geom).array() * w.array()).sum(); };
  return probe_tensor(in, unfold_patches_backward(w, in.shape(), geom), loss, rng);
}

double fold_instance(std::mt19937_64& rng, const PatchGeometry& geom) {
  const Shape shape{1, 2, 8, 6};
  const PatchMatrix<double> base = unfold_patches(random_tensor(shape, rng), geom);
  std::vector<double> flat(base.data(), base.data() + base.size());
  const TensorD up = random_tensor(shape, rng);
  auto fold = [&] {
    PatchMatrix<double> p = Eigen::Map<const PatchMatrix<double>>(flat.data(), base.rows(), base.cols());
    return fold_patches(p, shape, geom);
  };
  const PatchMatrix<double> g = fold_patches_backward(up, geom);
  const std::vector<double> analytic(g.data(), g.data() + g.size());
  return probe(flat, analytic, [&] { return weighted_sum(fold(), up); }, sample_indices(flat.size(), 24, rng));
}

double relu_instance(std::mt19937_64& rng) {
  TensorD in = random_tensor(Shape{1, 2, 5, 5}, rng);
  for (auto& v : in.values())
    if (std::abs(v) < 0.01) v = 0.5;
  const TensorD up = random_tensor(in.shape(), rng);
  return probe_tensor(in, relu_backward(up, in), [&] { return weighted_sum(relu(in), up); }, rng);
}

double sigmoid_instance(std::mt19937_64& rng) {
  TensorD in = random_tensor(Shape{1, 2, 5, 5}, rng, -4, 4);
  const TensorD up = random_tensor(in.shape(), rng);
  return probe_tensor(in, sigmoid_backward(up, sigmoid(in)), [&] { return weighted_sum(sigmoid(in), up); }, rng);
}

double broadcast_instance(std::mt19937_64& rng) {
  TensorD gate = random_tensor(Shape{1, 1, 4, 5}, rng), t = random_tensor(Shape{1, 3, 4, 5}, rng);
  const TensorD up = random_tensor(t.shape(), rng);
  auto loss = [&] { return weighted_sum(broadcast_mul(gate, t), up); };
  return std::max(probe_tensor(gate, channel_dot(up, t), loss, rng), probe_tensor(t, broadcast_mul(gate, up), loss, rng));
}

// --- composites ------------------------------------------------------------

double conv_stack_instance(std::mt19937_64& rng) {
  ConvStack<double> s = random_stack({3, 5, 4, 2}, rng);
  TensorD in = random_tensor(Shape{1, 3, 6, 6}, rng);
  typename ConvStack<double>::Cache cache;
  const TensorD out = s.forward(in, &cache);
  const TensorD up = random_tensor(out.shape(), rng);
  ConvStack<double> grads = s.zeros_like();
  const TensorD gin = s.backward(up, cache, grads);
  auto loss = [&] { return weighted_sum(s.forward(in), up); };
  return std::max(probe_tensor(in, gin, loss, rng), check_conv_stack(s, grads, loss, rng));
}

MatchResult random_match(int lr_h, int lr_w, int ref_h, int ref_w, std::mt19937_64& rng) {
  MatchResult m = MatchResult::identity(lr_h, lr_w);
  m.ref_h = ref_h;
  m.ref_w = ref_w;
  std::uniform_int_distribution<int> pick(0, ref_h * ref_w - 1);
  for (int& i : m.index) i = pick(rng);
  return m;
}

double warp_index_instance(std::mt19937_64& rng) {
  const int s = 1 + static_cast<int>(rng() % 2);
  const MatchResult m = random_match(4, 5, 3, 4, rng);
  TensorD src = random_tensor(Shape{1, 2, 3 * s, 4 * s}, rng);
  const TensorD up = random_tensor(Shape{1, 2, 4 * s, 5 * s}, rng);
  return probe_tensor(src, warp_by_index_backward(up, m, s, src.shape()),
                      [&] { return weighted_sum(warp_by_index(src, m, s), up); }, rng);
}

AffineField<double> random_field(int h, int w, std::mt19937_64& rng) {
  AffineField<double> f = AffineField<double>::identity(h, w);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (double& r : f.residual) r = u(rng);
  return f;
}

double patch_affine_instance(std::mt19937_64& rng, bool wrt_residual) {
  const int s = 1 + static_cast<int>(rng() % 2);
  TensorD x = random_tensor(Shape{1, 2, 4 * s, 5 * s}, rng);
  AffineField<double> f = random_field(4, 5, rng);
  const TensorD up = random_tensor(x.shape(), rng);
  const AffinePatchGrads<double> g = apply_patch_affine_backward(x, f, s, up);
  auto loss = [&] { return weighted_sum(apply_patch_affine(x, f, s), up); };
  if (!wrt_residual) return probe_tensor(x, g.input, loss, rng);
  return probe(f.residual, g.residual, loss, sample_indices(f.residual.size(), 24, rng));
}

double transformer_instance(std::mt19937_64& rng) {
  ConvStack<double> t = random_stack({6, 4, 4, 6}, rng);
  const TensorD a = random_tensor(Shape{1, 3, 8, 10}, rng), b = random_tensor(Shape{1, 3, 8, 10}, rng);
  const AffineBounds bounds{0.3, 1.5};
  const AlignmentPrediction<double> p = predict_alignment(a, b, t, bounds, 2);
  const std::vector<double> w = random_vector(p.field.residual.size(), rng);
  ConvStack<double> grads = t.zeros_like();
  predict_alignment_backward(w, p, t, grads);
  auto loss = [&] {
    const auto q = predict_alignment(a, b, t, bounds, 2);
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * q.field.residual[i];
    return s;
  };
  return check_conv_stack(t, grads, loss, rng, 6);
}

double fuse_instance(std::mt19937_64& rng, FusionMode mode) {
  FusionGate<double> gate{random_stack({1, 4, 1}, rng), random_layer(6, 3, rng)};
  TensorD f_sr = random_tensor(Shape{1, 3, 5, 6}, rng), f_ref = random_tensor(Shape{1, 3, 5, 6}, rng);
  TensorD c = random_tensor(Shape{1, 1, 5, 6}, rng);
  const TensorD up = random_tensor(f_sr.shape(), rng);
  FuseCache<double> cache;
  adaptive_feature_fuse(f_sr, f_ref, c, gate, mode, &cache);
  FusionGate<double> grads = gate.zeros_like();
  const FuseGrads<double> g = adaptive_feature_fuse_backward(up, f_sr, f_ref, c, gate, mode, cache, grads);
  auto loss = [&] { return weighted_sum(adaptive_feature_fuse(f_sr, f_ref, c, gate, mode), up); };
  double worst = std::max(probe_tensor(f_sr, g.f_sr, loss, rng, 12), probe_tensor(f_ref, g.f_ref, loss, rng, 12));
  if (mode != FusionMode::Sum) {
    worst = std::max(worst, probe_tensor(c, g.confidence, loss, rng, 12));
    worst = std::max(worst, probe_tensor(gate.h.weight, grads.h.weight, loss, rng, 12));
  }
  if (mode == FusionMode::Adaptive) worst = std::max(worst, check_conv_stack(gate.g, grads.g, loss, rng, 4));
  return worst;
}

double image_fuse_instance(std::mt19937_64& rng) {
  ConvStack<double> g = random_stack({1, 4, 1}, rng);
  TensorD d = random_tensor(Shape{1, 3, 6, 6}, rng), hf = random_tensor(d.shape(), rng);
  TensorD c = random_tensor(Shape{1, 1, 6, 6}, rng);
  const TensorD up = random_tensor(d.shape(), rng);
  ImageFuseCache<double> cache;
  image_space_fuse(d, hf, c, g, &cache);
  ConvStack<double> grads = g.zeros_like();
  const ImageFuseGrads<double> gr = image_space_fuse_backward(up, hf, g, cache, grads);
  auto loss = [&] { return weighted_sum(image_space_fuse(d, hf, c, g), up); };
  double worst = std::max(probe_tensor(d, gr.decoded, loss, rng, 12), probe_tensor(hf, gr.hf_aligned, loss, rng, 12));
  worst = std::max(worst, probe_tensor(c, gr.confidence, loss, rng, 12));
  return std::max(worst, check_conv_stack(g, grads, loss, rng, 4));
}

double contextual_instance(std::mt19937_64& rng) {
  TensorD x = random_tensor(Shape{1, 4, 5, 5}, rng);
  const TensorD y = random_tensor(Shape{1, 4, 6, 4}, rng);
  const ContextualResult r = contextual_distance(x, y);
  const std::vector<double> w = random_vector(r.delta.size(), rng);
  const TensorD g = contextual_distance_backward(x, y, r, w);
  auto loss = [&] {
    const ContextualResult q = contextual_distance_assigned(x, y, r.assignment);
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * q.delta[i];
    return s;
  };
  return probe_tensor(x, g, loss, rng);
}

// Loss checks run with the nearest-neighbour assignment of the unperturbed point.
double reconstruction_instance(std::mt19937_64& rng) {
  const ConvLayer<double> e = random_layer(3, 4, rng);
  TensorD sr = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const TensorD hr = random_tensor(sr.shape(), rng, 0, 1);
  const LossValue<double> l = reconstruction_loss(sr, hr, e);
  return probe_tensor(sr, l.grad, [&] { return reconstruction_loss(sr, hr, e, nullptr, &l.assignment).value; }, rng);
}

double fidelity_instance(std::mt19937_64& rng) {
  const ConvLayer<double> e = random_layer(3, 4, rng);
  TensorD sr = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const TensorD ref = random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
  const TensorD c = random_tensor(Shape{1, 1, 8, 8}, rng, 0.05, 1.0);
  const LossValue<double> l = fidelity_loss(sr, ref, c, e);
  return probe_tensor(sr, l.grad, [&] { return fidelity_loss(sr, ref, c, e, nullptr, &l.assignment).value; }, rng);
}

double sra_instance(std::mt19937_64& rng) {
  const ConvLayer<double> e = random_layer(3, 4, rng);
  TensorD sr = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const TensorD wide = random_tensor(Shape{1, 3, 4, 4}, rng, 0, 1), tele = random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
  const TensorD c = random_tensor(Shape{1, 1, 8, 8}, rng, 0.05, 1.0);
  const LossValue<double> l = sra_loss(sr, wide, tele, c, 0.1, e);
  return probe_tensor(
      sr, l.grad, [&] { return sra_loss(sr, wide, tele, c, 0.1, e, nullptr, &l.assignment).value; }, rng);
}

double l1_instance(std::mt19937_64& rng) {
  TensorD sr = random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
  const TensorD hr = random_tensor(sr.shape(), rng, 0, 1);
  return probe_tensor(sr, l1_loss(sr, hr).grad, [&] { return l1_loss(sr, hr).value; }, rng);
}

ModelConfig tiny_model(FusionMode mode) {
  ModelConfig c;
  c.phi_channels = 4;
  c.psi_stem_channels = 4;
  c.hr_channels = 4;
  c.lr_channels = 6;
  c.residual_blocks = 1;
  c.transformer_channels = 4;
  c.gate_channels = 2;
  c.fusion = mode;
  return c;
}

// Training objective rec + 0.1 fid through the whole network, w.r.t. trainable weights.
double end_to_end_instance(std::mt19937_64& rng) {
  const FusionMode modes[] = {FusionMode::Adaptive, FusionMode::Soft, FusionMode::Sum};
  ModelParams<double> p = init_params<double>(rng(), tiny_model(modes[rng() % 3]));
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (auto& v : p.transformer.layers.back().weight.values()) v = small(rng);
  const TensorD lr = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1), ref = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
  const TensorD hr = random_tensor(Shape{1, 3, 32, 32}, rng, 0, 1);
  const MatchContext<double> ctx = build_context(p, lr, ref);
  const ForwardTrace<double> trace = forward(p, lr, ref, ctx);
  const LossValue<double> rec = reconstruction_loss(trace.sr, hr, p.embedding());
  const LossValue<double> fid = fidelity_loss(trace.sr, ref, ctx.conf_hr, p.embedding());
  TensorD grad_sr = fid.grad;
  grad_sr *= 0.1;
  grad_sr += rec.grad;
  const ModelParams<double> grads = backward(p, ctx, trace, grad_sr);
  auto loss = [&] {
    const TensorD sr = forward(p, lr, ref, ctx).sr;
    return reconstruction_loss(sr, hr, p.embedding(), nullptr, &rec.assignment).value +
           0.1 * fidelity_loss(sr, ref, ctx.conf_hr, p.embedding(), nullptr, &fid.assignment).value;
  };
  auto layers = p.named_layers();
  const auto glayers = grads.named_layers();
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (ModelParams<double>::trainable(layers[i].first)) trainable.push_back(i);
  double worst = 0.0;
  for (int k = 0; k < 24; ++k) {
    const std::size_t li = trainable[rng() % trainable.size()];
    ConvLayer<double>& l = *layers[li].second;
    const ConvLayer<double>& g = *glayers[li].second;
    const std::size_t idx = rng() % l.parameter_count();
    if (idx < l.weight.size()) {
      std::vector<double> v{l.weight[idx]};
      // probe() perturbs a vector, so mirror the value into the layer on each call.
      worst = std::max(worst, probe(v, {g.weight[idx]}, [&] { l.weight[idx] = v[0]; return loss(); }, {0}));
      l.weight[idx] = v[0];
    } else {
      const std::size_t b = idx - l.weight.size();
      worst = std::max(worst, probe(l.bias, g.bias, loss, {b}));
    }
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t seed, int instances) {
  struct Entry {
    const char* name;
    double tolerance;
    std::function<double(std::mt19937_64&)> fn;
  };
  const std::vector<Entry> entries = {
      {"conv2d", kKernelTolerance, conv_instance},
      {"bicubic_up2", kKernelTolerance, [](auto& r) { return bicubic_instance(r, Resample::Up2); }},
      {"bicubic_down2", kKernelTolerance, [](auto& r) { return bicubic_instance(r, Resample::Down2); }},
      {"gaussian_blur3x3", kKernelTolerance, blur_instance},
      {"grid_sample_bilinear", kKernelTolerance, grid_sample_instance},
      {"bilinear_upsample2", kKernelTolerance, bilinear_up_instance},
      {"unfold_patches_dense3", kKernelTolerance, [](auto& r) { return unfold_instance(r, PatchGeometry::dense(3)); }},
      {"unfold_patches_cells2", kKernelTolerance, [](auto& r) { return unfold_instance(r, PatchGeometry::cells(2)); }},
      {"fold_patches_dense3", kKernelTolerance, [](auto& r) { return fold_instance(r, PatchGeometry::dense(3)); }},
      {"fold_patches_cells2", kKernelTolerance, [](auto& r) { return fold_instance(r, PatchGeometry::cells(2)); }},
      {"relu", kKernelTolerance, relu_instance},
      {"sigmoid", kKernelTolerance, sigmoid_instance},
      {"broadcast_mul", kKernelTolerance, broadcast_instance},
      {"conv_stack", kCompositeTolerance, conv_stack_instance},
      {"warp_by_index", kCompositeTolerance, warp_index_instance},
      {"apply_patch_affine.input", kCompositeTolerance, [](auto& r) { return patch_affine_instance(r, false); }},
      {"apply_patch_affine.residual", kCompositeTolerance, [](auto& r) { return patch_affine_instance(r, true); }},
      {"predict_alignment", kCompositeTolerance, transformer_instance},
      {"feature_fuse.adaptive", kCompositeTolerance, [](auto& r) { return fuse_instance(r, FusionMode::Adaptive); }},
      {"feature_fuse.soft", kCompositeTolerance, [](auto& r) { return fuse_instance(r, FusionMode::Soft); }},
      {"feature_fuse.sum", kCompositeTolerance, [](auto& r) { return fuse_instance(r, FusionMode::Sum); }},
      {"image_space_fuse", kCompositeTolerance, image_fuse_instance},
      {"contextual_distance", kCompositeTolerance, contextual_instance},
      {"reconstruction_loss", kCompositeTolerance, reconstruction_instance},
      {"fidelity_loss", kCompositeTolerance, fidelity_instance},
      {"sra_loss", kCompositeTolerance, sra_instance},
      {"l1_loss", kCompositeTolerance, l1_instance},
      {"end_to_end", kCompositeTolerance, end_to_end_instance},
  };
  std::vector<CheckResult> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    out.push_back(run_check(entries[i].name, instances, entries[i].tolerance, seed + 101 * i, entries[i].fn));
  return out;
}

}  // namespace refsr::gradcheck
