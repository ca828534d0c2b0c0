#include "refsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

namespace refsr {

using nlohmann::json;

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double mirror(double q, int n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * (n - 1);
  q = std::fmod(std::abs(q), period);
  return q > n - 1 ? period - q : q;
}

struct Polygon {
  std::vector<double> xs, ys;
  std::array<double, 3> color;
  double stripe_angle, stripe_period, stripe_amp;

  bool contains(double x, double y) const {
    bool inside = false;
    for (std::size_t i = 0, j = xs.size() - 1; i < xs.size(); j = i++) {
      if ((ys[i] > y) != (ys[j] > y) && x < (xs[j] - xs[i]) * (y - ys[i]) / (ys[j] - ys[i]) + xs[i]) inside = !inside;
    }
    return inside;
  }
};

template <typename P>
void add_scaled(P& acc, const P& g, float scale = 1.0f) {
  auto dst = acc.named_layers();
  const auto src = g.named_layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    ConvLayer<float>& a = *dst[i].second;
    const ConvLayer<float>& b = *src[i].second;
    for (std::size_t k = 0; k < a.weight.size(); ++k) a.weight[k] += scale * b.weight[k];
    for (std::size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += scale * b.bias[k];
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic pairs

json SynthPair::meta() const {
  return json{{"texture_seed", texture_seed},
              {"extent", hr.height()},
              {"crop", {{"y", crop_y}, {"x", crop_x}, {"size", crop_size}}},
              {"affine", {{"angle_deg", affine.angle_deg}, {"scale", affine.scale}, {"tx", affine.tx}, {"ty", affine.ty}}},
              {"gain", gain}};
}

Image render_texture(std::uint64_t seed, int extent) {
  std::mt19937_64 rng(seed);
  constexpr double kTau = 2.0 * std::numbers::pi;
  std::array<double, 3> base;
  for (double& b : base) b = uniform(rng, 0.3, 0.7);
  struct Wave {
    double kx, ky, phase;
    std::array<double, 3> amp;
  };
  std::vector<Wave> waves(4);
  for (Wave& w : waves) {
    const double angle = uniform(rng, 0.0, std::numbers::pi), wavelength = uniform(rng, 4.0, 16.0);
    w.kx = kTau * std::cos(angle) / wavelength;
    w.ky = kTau * std::sin(angle) / wavelength;
    w.phase = uniform(rng, 0.0, kTau);
    for (double& a : w.amp) a = uniform(rng, 0.02, 0.08);
  }

  // One grating patch.
  const int gw = uniform_int(rng, extent / 4, extent / 2), gh = uniform_int(rng, extent / 4, extent / 2);
  const int gx = uniform_int(rng, 0, extent - gw), gy = uniform_int(rng, 0, extent - gh);
  const double g_angle = uniform(rng, 0.0, std::numbers::pi), g_period = uniform(rng, 3.0, 7.0);
  const double g_amp = uniform(rng, 0.1, 0.2);

  std::vector<Polygon> polys(uniform_int(rng, 3, 5));
  for (Polygon& poly : polys) {
    const double cx = uniform(rng, 0, extent), cy = uniform(rng, 0, extent);
    const double radius = uniform(rng, extent / 8.0, extent / 3.0);
    std::vector<double> angles(uniform_int(rng, 3, 6));
    for (double& a : angles) a = uniform(rng, 0.0, kTau);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double r = radius * uniform(rng, 0.6, 1.0);
      poly.xs.push_back(cx + r * std::cos(a));
      poly.ys.push_back(cy + r * std::sin(a));
    }
    for (double& c : poly.color) c = uniform(rng, 0.1, 0.9);
    poly.stripe_angle = uniform(rng, 0.0, std::numbers::pi);
    poly.stripe_period = uniform(rng, 3.0, 9.0);
    poly.stripe_amp = uniform(rng, 0.0, 0.1);
  }

  constexpr int kSub = 4;
  Image img(extent, extent, 3);
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub, py = y + (sy + 0.5) / kSub;
          std::array<double, 3> v = base;
          for (const Wave& w : waves) {
            const double s = std::sin(w.kx * px + w.ky * py + w.phase);
            for (int c = 0; c < 3; ++c) v[c] += w.amp[c] * s;
          }
          if (px >= gx && px < gx + gw && py >= gy && py < gy + gh) {
            const double t = px * std::cos(g_angle) + py * std::sin(g_angle);
            const double square = std::fmod(t / g_period + 1000.0, 1.0) < 0.5 ? 1.0 : -1.0;
            for (double& c : v) c += g_amp * square;
          }
          for (const Polygon& poly : polys) {
            if (!poly.contains(px, py)) continue;
            const double t = px * std::cos(poly.stripe_angle) + py * std::sin(poly.stripe_angle);
            const double stripe = poly.stripe_amp * std::sin(kTau * t / poly.stripe_period);
            for (int c = 0; c < 3; ++c) v[c] = poly.color[c] + stripe;
          }
          for (int c = 0; c < 3; ++c) acc[c] += v[c];
        }
      }
      for (int c = 0; c < 3; ++c) img.set(y, x, c, static_cast<float>(acc[c] / (kSub * kSub)));
    }
  }
  return img;
}

float sample_reflect(const Image& image, double x, double y, int channel) {
  x = mirror(x, image.width());
  y = mirror(y, image.height());
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, image.width() - 1), y1 = std::min(y0 + 1, image.height() - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * image.at(y0, x0, channel) + fx * image.at(y0, x1, channel);
  const double bottom = (1 - fx) * image.at(y1, x0, channel) + fx * image.at(y1, x1, channel);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

Image warp_crop(const Image& hr, int crop_y, int crop_x, int crop_size, const RefAffine& affine) {
  const double c = (crop_size - 1) / 2.0;
  const double theta = affine.angle_deg * std::numbers::pi / 180.0;
  const double a = affine.scale * std::cos(theta), b = affine.scale * std::sin(theta);
  Image out(crop_size, crop_size, hr.channels());
  for (int v = 0; v < crop_size; ++v) {
    for (int u = 0; u < crop_size; ++u) {
      const double dx = u - c, dy = v - c;
      const double x = crop_x + c + a * dx - b * dy + affine.tx;
      const double y = crop_y + c + b * dx + a * dy + affine.ty;
      for (int ch = 0; ch < hr.channels(); ++ch) out.set(v, u, ch, sample_reflect(hr, x, y, ch));
    }
  }
  return out;
}

std::vector<SynthPair> synth_dataset(std::uint64_t seed, int n, int extent, const SynthOptions& o) {
  if (extent < 32 || extent % 2) throw Error("synth extent must be even and >= 32, got " + std::to_string(extent));
  if (n < 0) throw Error("synth pair count must be >= 0");
  const int crop = static_cast<int>(extent * o.crop_fraction) / 4 * 4;
  if (crop < kMinExtent || crop > extent) throw Error("crop_fraction gives a reference extent of " + std::to_string(crop));
  std::mt19937_64 rng(seed);
  std::vector<SynthPair> pairs(n);
  for (SynthPair& p : pairs) {
    p.texture_seed = rng();
    p.hr = render_texture(p.texture_seed, extent);
    p.lr = Image::from_tensor(bicubic_resize(p.hr.to_tensor(), Resample::Down2));
    p.affine.angle_deg = uniform(rng, -o.max_angle_deg, o.max_angle_deg);
    p.affine.scale = uniform(rng, o.min_scale, o.max_scale);
    p.affine.tx = uniform(rng, -o.max_shift, o.max_shift);
    p.affine.ty = uniform(rng, -o.max_shift, o.max_shift);
    for (double& g : p.gain) g = uniform(rng, o.min_gain, o.max_gain);
    p.crop_size = crop;
    p.crop_y = p.crop_x = (extent - crop) / 2;
    p.ref = warp_crop(p.hr, p.crop_y, p.crop_x, crop, p.affine);
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x)
        for (int c = 0; c < 3; ++c) p.ref.set(y, x, c, static_cast<float>(p.ref.at(y, x, c) * p.gain[c]));
  }
  return pairs;
}

void write_dataset(const std::vector<SynthPair>& pairs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pair_%04zu", i);
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    write_png(pairs[i].hr, sub / "hr.png");
    write_png(pairs[i].lr, sub / "lr.png");
    write_png(pairs[i].ref, sub / "ref.png");
    std::ofstream(sub / "meta.json") << pairs[i].meta().dump(2) << '\n';
  }
}

std::vector<SynthPair> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("pair_", 0) == 0) subs.push_back(e.path());
  std::sort(subs.begin(), subs.end());
  if (subs.empty()) throw Error("no pair_* directories in " + dir.string());
  std::vector<SynthPair> pairs;
  for (const auto& sub : subs) {
    SynthPair p;
    p.hr = read_png(sub / "hr.png");
    p.lr = read_png(sub / "lr.png");
    p.ref = read_png(sub / "ref.png");
    std::ifstream in(sub / "meta.json");
    if (in) {
      try {
        const json m = json::parse(in);
        p.texture_seed = m.at("texture_seed").get<std::uint64_t>();
        p.crop_y = m.at("crop").at("y");
        p.crop_x = m.at("crop").at("x");
        p.crop_size = m.at("crop").at("size");
        const json& a = m.at("affine");
        p.affine = {a.at("angle_deg"), a.at("scale"), a.at("tx"), a.at("ty")};
        p.gain = m.at("gain").get<std::array<double, 3>>();
      } catch (const json::exception& e) {
        throw Error("bad meta.json in " + sub.string() + ": " + e.what());
      }
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

ShiftedPair apply_domain_shift(const SynthPair& pair, const DomainShift& shift) {
  Tensor scene = gaussian_blur3x3(pair.hr.to_tensor(), shift.blur_sigma);
  for (int c = 0; c < scene.c(); ++c) {
    float* plane = scene.plane(0, c);
    for (int i = 0; i < scene.h() * scene.w(); ++i) plane[i] = static_cast<float>(plane[i] * shift.gain[c]);
  }
  ShiftedPair out;
  out.truth = Image::from_tensor(scene);
  out.wide = Image::from_tensor(bicubic_resize(out.truth.to_tensor(), Resample::Down2));
  out.tele = pair.ref;
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("psnr: image shapes differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double d = double(a.values()[i]) - double(b.values()[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.values().size());
  return mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
}

std::vector<double> luminance(const Image& image) {
  std::vector<double> y(static_cast<std::size_t>(image.height()) * image.width());
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      y[static_cast<std::size_t>(r) * image.width() + c] =
          image.channels() == 1 ? image.at(r, c, 0)
                                : 0.299 * image.at(r, c, 0) + 0.587 * image.at(r, c, 1) + 0.114 * image.at(r, c, 2);
    }
  }
  return y;
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("ssim: image shapes differ");
  constexpr int kWin = 11;
  if (a.height() < kWin || a.width() < kWin) throw Error("ssim: extents must be >= 11");
  std::array<double, kWin> g1;
  double total = 0.0;
  for (int i = 0; i < kWin; ++i) total += g1[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  for (double& g : g1) g /= total;
  const std::vector<double> x = luminance(a), y = luminance(b);
  const int w = a.width();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  int count = 0;
  for (int r = 0; r + kWin <= a.height(); ++r) {
    for (int c = 0; c + kWin <= w; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
          const double wt = g1[i] * g1[j];
          const double xv = x[static_cast<std::size_t>(r + i) * w + c + j], yv = y[static_cast<std::size_t>(r + i) * w + c + j];
          mx += wt * xv;
          my += wt * yv;
          sxx += wt * xv * xv;
          syy += wt * yv * yv;
          sxy += wt * xv * yv;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / count;
}

// ---------------------------------------------------------------------------
// Configs

LossMode parse_loss_mode(const std::string& name) {
  if (name == "full") return LossMode::Full;
  if (name == "l1") return LossMode::L1;
  throw Error("unknown loss mode '" + name + "' (expected full or l1)");
}

std::string to_string(LossMode mode) { return mode == LossMode::Full ? "full" : "l1"; }

json TrainConfig::to_json() const {
  return json{{"seed", seed},           {"steps", steps},         {"batch_size", batch_size},
              {"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2},
              {"epsilon", epsilon},     {"w_fid", w_fid},         {"lambda", lambda},
              {"extent", extent},       {"pairs", pairs},         {"eval_pairs", eval_pairs},
              {"eval_every", eval_every}, {"loss", to_string(loss)}, {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  read_config_keys(j, "train config", [&c](const std::string& k, const json& v) {
    if (k == "seed") c.seed = json_u64(v);
    else if (k == "steps") c.steps = json_int(v);
    else if (k == "batch_size") c.batch_size = json_int(v);
    else if (k == "learning_rate") c.learning_rate = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "epsilon") c.epsilon = v.get<double>();
    else if (k == "w_fid") c.w_fid = v.get<double>();
    else if (k == "lambda") c.lambda = v.get<double>();
    else if (k == "extent") c.extent = json_int(v);
    else if (k == "pairs") c.pairs = json_int(v);
    else if (k == "eval_pairs") c.eval_pairs = json_int(v);
    else if (k == "eval_every") c.eval_every = json_int(v);
    else if (k == "loss") c.loss = parse_loss_mode(v.get<std::string>());
    else if (k == "model") c.model = ModelConfig::from_json(v);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (steps < 1) throw Error("train config: steps must be >= 1");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw Error("train config: learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("train config: betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw Error("train config: epsilon must be positive");
  if (!(w_fid >= 0) || !(lambda >= 0)) throw Error("train config: loss weights must be >= 0");
  if (extent < 32 || extent % 2) throw Error("train config: extent must be even and >= 32");
  if (pairs < 1) throw Error("train config: pairs must be >= 1");
  if (eval_pairs < 0 || eval_every < 0) throw Error("train config: eval_pairs and eval_every must be >= 0");
  model.validate();
}

json AdaptConfig::to_json() const {
  return json{{"seed", seed},   {"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
              {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon},       {"lambda", lambda}};
}

AdaptConfig AdaptConfig::from_json(const json& j) {
  AdaptConfig c;
  read_config_keys(j, "adapt config", [&c](const std::string& k, const json& v) {
    if (k == "seed") c.seed = json_u64(v);
    else if (k == "steps") c.steps = json_int(v);
    else if (k == "batch_size") c.batch_size = json_int(v);
    else if (k == "learning_rate") c.learning_rate = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "epsilon") c.epsilon = v.get<double>();
    else if (k == "lambda") c.lambda = v.get<double>();
    else return false;
    return true;
  });
  c.validate();
  return c;
}

void AdaptConfig::validate() const {
  if (steps < 1) throw Error("adapt config: steps must be >= 1");
  if (batch_size < 1) throw Error("adapt config: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw Error("adapt config: learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("adapt config: betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw Error("adapt config: epsilon must be positive");
  if (!(lambda >= 0)) throw Error("adapt config: lambda must be >= 0");
}

// ---------------------------------------------------------------------------
// Examples and objectives

Example make_example(const ModelParams<float>& p, const Image& lr, const Image& ref, const Image* hr) {
  Example ex;
  ex.lr = lr.to_tensor();
  ex.ref = ref.to_tensor();
  ex.ctx = build_context(p, ex.lr, ex.ref);
  ex.ref_feat = embed_features(p.embedding(), ex.ref);
  if (hr) {
    ex.hr = hr->to_tensor();
    if (ex.hr.h() != 2 * ex.lr.h() || ex.hr.w() != 2 * ex.lr.w()) throw Error("hr must be twice the lr extent");
    ex.hr_feat = embed_features(p.embedding(), ex.hr);
  }
  return ex;
}

std::vector<Example> make_examples(const ModelParams<float>& p, const std::vector<SynthPair>& pairs) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const SynthPair& s : pairs) out.push_back(make_example(p, s.lr, s.ref, &s.hr));
  return out;
}

std::vector<Example> make_examples(const ModelParams<float>& p, const std::vector<ShiftedPair>& pairs) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const ShiftedPair& s : pairs) out.push_back(make_example(p, s.wide, s.tele, &s.truth));
  return out;
}

LossTerms training_loss(const ForwardTrace<float>& trace, const Example& ex, const ModelParams<float>& p,
                        const TrainConfig& config) {
  LossTerms out;
  if (config.loss == LossMode::L1) {
    LossValue<float> l = l1_loss(trace.sr, ex.hr);
    out.total = out.rec = l.value;
    out.grad = std::move(l.grad);
    return out;
  }
  LossValue<float> rec = reconstruction_loss(trace.sr, ex.hr, p.embedding(), &ex.hr_feat);
  out.rec = rec.value;
  out.grad = std::move(rec.grad);
  if (config.w_fid > 0) {
    LossValue<float> fid = fidelity_loss(trace.sr, ex.ref, ex.ctx.conf_hr, p.embedding(), &ex.ref_feat);
    out.fid = fid.value;
    out.grad += fid.grad * static_cast<float>(config.w_fid);
  }
  out.total = out.rec + config.w_fid * out.fid;
  return out;
}

LossTerms adaptation_loss(const ForwardTrace<float>& trace, const Example& ex, const ModelParams<float>& p,
                          double lambda) {
  LossValue<float> l = sra_loss(trace.sr, ex.lr, ex.ref, ex.ctx.conf_hr, lambda, p.embedding(), &ex.ref_feat);
  LossTerms out;
  out.total = l.value;
  out.rec = l.term1;
  out.fid = lambda > 0 ? l.term2 / lambda : 0.0;
  out.grad = std::move(l.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

Adam::Adam(const ModelParams<float>& like, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ModelParams<float>& params, const ModelParams<float>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
  auto p = params.named_layers();
  const auto g = grads.named_layers();
  auto m = m_.named_layers();
  auto v = v_.named_layers();
  auto update = [&](float& w, float grad, float& mm, float& vv) {
    mm = static_cast<float>(beta1_ * mm + (1 - beta1_) * grad);
    vv = static_cast<float>(beta2_ * vv + (1 - beta2_) * double(grad) * grad);
    w = static_cast<float>(w - lr_ * (mm / c1) / (std::sqrt(vv / c2) + epsilon_));
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!ModelParams<float>::trainable(p[i].first)) continue;
    ConvLayer<float>& w = *p[i].second;
    const ConvLayer<float>& gl = *g[i].second;
    for (std::size_t k = 0; k < w.weight.size(); ++k) update(w.weight[k], gl.weight[k], m[i].second->weight[k], v[i].second->weight[k]);
    for (std::size_t k = 0; k < w.bias.size(); ++k) update(w.bias[k], gl.bias[k], m[i].second->bias[k], v[i].second->bias[k]);
  }
}

// ---------------------------------------------------------------------------
// Evaluation and loops

EvalResult evaluate(const ModelParams<float>& p, const std::vector<Example>& examples) {
  EvalResult r;
  for (const Example& ex : examples) {
    if (!ex.hr.size()) throw Error("evaluate: example has no ground truth");
    const ForwardTrace<float> t = forward(p, ex.lr, ex.ref, ex.ctx);
    const Image sr = Image::from_tensor(t.sr), hr = Image::from_tensor(ex.hr);
    const Image bic = Image::from_tensor(ex.ctx.lr_up);
    r.psnr.push_back(psnr(sr, hr));
    r.ssim.push_back(ssim(sr, hr));
    r.bicubic_psnr.push_back(psnr(bic, hr));
    r.bicubic_ssim.push_back(ssim(bic, hr));
    r.gate.push_back(t.mean_gate());
  }
  auto avg = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  r.mean_psnr = avg(r.psnr);
  r.mean_ssim = avg(r.ssim);
  r.mean_bicubic_psnr = avg(r.bicubic_psnr);
  r.mean_bicubic_ssim = avg(r.bicubic_ssim);
  r.mean_gate = avg(r.gate);
  return r;
}

void write_log_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write log " + path.string());
  out << "step,loss_total,loss_rec,loss_fid,eval_psnr,eval_ssim\n";
  for (const LogRow& r : rows) {
    out << r.step << ',' << format_double(r.loss_total) << ',' << format_double(r.loss_rec) << ','
        << format_double(r.loss_fid) << ',' << (r.eval_psnr ? format_double(*r.eval_psnr) : "") << ','
        << (r.eval_ssim ? format_double(*r.eval_ssim) : "") << '\n';
  }
}

namespace {

/// Cycles through a shuffled example order, reshuffling each epoch.
class Sampler {
 public:
  Sampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

template <typename LossFn>
double mean_objective(const ModelParams<float>& p, const std::vector<Example>& examples, LossFn&& loss) {
  double s = 0.0;
  for (const Example& ex : examples) s += loss(forward(p, ex.lr, ex.ref, ex.ctx), ex).total;
  return examples.empty() ? 0.0 : s / examples.size();
}

/// One optimisation step over a batch; fills the loss columns of `row`.
template <typename LossFn>
void batch_step(ModelParams<float>& p, Adam& adam, const std::vector<Example>& examples, Sampler& sampler,
                int batch_size, int step, LogRow& row, LossFn&& loss) {
  ModelParams<float> grads = p.zeros_like();
  for (int b = 0; b < batch_size; ++b) {
    const Example& ex = examples[sampler.next()];
    const ForwardTrace<float> trace = forward(p, ex.lr, ex.ref, ex.ctx);
    const LossTerms terms = loss(trace, ex);
    if (!std::isfinite(terms.total)) throw Error("non-finite loss at step " + std::to_string(step));
    add_scaled(grads, backward(p, ex.ctx, trace, terms.grad), 1.0f / batch_size);
    row.loss_total += terms.total / batch_size;
    row.loss_rec += terms.rec / batch_size;
    row.loss_fid += terms.fid / batch_size;
  }
  adam.step(p, grads);
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<SynthPair>* data, const ProgressFn& progress) {
  config.validate();
  const std::vector<SynthPair> generated =
      data ? std::vector<SynthPair>{} : synth_dataset(config.seed, config.pairs, config.extent);
  const std::vector<SynthPair>& pairs = data ? *data : generated;
  if (pairs.empty()) throw Error("train: no training pairs");

  TrainResult result;
  result.params = init_params<float>(config.seed, config.model);
  ModelParams<float>& p = result.params;
  const std::vector<Example> train_set = make_examples(p, pairs);
  const std::vector<Example> eval_set =
      make_examples(p, synth_dataset(config.eval_seed(), config.eval_pairs, pairs.front().hr.height()));
  auto loss = [&](const ForwardTrace<float>& t, const Example& ex) { return training_loss(t, ex, p, config); };

  result.initial_loss = mean_objective(p, train_set, loss);
  Adam adam(p, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  Sampler sampler(train_set.size(), config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int step = 1; step <= config.steps; ++step) {
    LogRow row;
    row.step = step;
    batch_step(p, adam, train_set, sampler, config.batch_size, step, row, loss);
    const bool eval_now = step == config.steps || (config.eval_every > 0 && step % config.eval_every == 0);
    if (eval_now && !eval_set.empty()) {
      const EvalResult e = evaluate(p, eval_set);
      row.eval_psnr = e.mean_psnr;
      row.eval_ssim = e.mean_ssim;
      if (step == config.steps) result.eval = e;
    }
    result.log.push_back(row);
    if (progress) progress(row);
  }
  result.final_loss = mean_objective(p, train_set, loss);
  return result;
}

std::pair<double, double> mean_adaptation_loss(const ModelParams<float>& p, const std::vector<Example>& examples,
                                               double lambda) {
  double total = 0.0, consistency = 0.0;
  for (const Example& ex : examples) {
    const LossTerms t = adaptation_loss(forward(p, ex.lr, ex.ref, ex.ctx), ex, p, lambda);
    total += t.total;
    consistency += t.rec;
  }
  const double n = std::max<std::size_t>(examples.size(), 1);
  return {total / n, consistency / n};
}

AdaptResult adapt_sra(const ModelParams<float>& start, const std::vector<Example>& examples, const AdaptConfig& config,
                      const ProgressFn& progress) {
  config.validate();
  if (examples.empty()) throw Error("adapt: no adaptation pairs");
  AdaptResult result;
  result.params = start;
  ModelParams<float>& p = result.params;
  std::tie(result.loss_before, result.consistency_before) = mean_adaptation_loss(p, examples, config.lambda);
  auto loss = [&](const ForwardTrace<float>& t, const Example& ex) { return adaptation_loss(t, ex, p, config.lambda); };
  Adam adam(p, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  Sampler sampler(examples.size(), config.seed ^ 0x51a7ULL);
  for (int step = 1; step <= config.steps; ++step) {
    LogRow row;
    row.step = step;
    batch_step(p, adam, examples, sampler, config.batch_size, step, row, loss);
    result.log.push_back(row);
    if (progress) progress(row);
  }
  std::tie(result.loss_after, result.consistency_after) = mean_adaptation_loss(p, examples, config.lambda);
  return result;
}

}  // namespace refsr
