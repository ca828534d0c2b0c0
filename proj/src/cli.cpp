#include "refsr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>
#include <json.hpp>

#include "refsr/gradcheck.hpp"
#include "refsr/matching.hpp"
#include "refsr/pipeline.hpp"

namespace refsr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flags, bad config values, missing required inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string flag_name(const std::string& key) {
  std::string s = "--" + key;
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

// Registers one flag per leaf of a subcommand's default config (nested objects are
// flattened, so "model.fusion" becomes --fusion) plus --config FILE. resolve()
// layers defaults, then the file, then explicitly given flags.
class ConfigFlags {
 public:
  ConfigFlags(CLI::App* app, json defaults) : app_(app), defaults_(std::move(defaults)) {
    app->add_option("--config", config_path_, "JSON config file; flags override its values");
    add_leaves(defaults_, "");
  }

  json resolve() const {
    json j = defaults_;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw UsageError("cannot read config " + config_path_);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError("config " + config_path_ + " is not valid JSON: " + e.what());
      }
      merge(j, file, "");
    }
    for (const Leaf& leaf : leaves_) {
      if (leaf.option->count() == 0) continue;
      j[json::json_pointer(leaf.pointer)] = parse_value(leaf, *leaf.value);
    }
    return j;
  }

 private:
  struct Leaf {
    std::string pointer;
    json::value_t type;
    std::string* value = nullptr;
    CLI::Option* option = nullptr;
  };

  void add_leaves(const json& node, const std::string& prefix) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      if (it->is_object()) {
        add_leaves(*it, prefix + "/" + it.key());
        continue;
      }
      std::string* raw = &storage_.emplace_back();
      leaves_.push_back(Leaf{prefix + "/" + it.key(), it->type(), raw,
                             app_->add_option(flag_name(it.key()), *raw, "default: " + it->dump())});
    }
  }

  static json parse_value(const Leaf& leaf, const std::string& text) {
    if (leaf.type == json::value_t::string) return text;
    try {
      return json::parse(text);
    } catch (const json::exception&) {
    }
    if (leaf.type == json::value_t::array) {
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          arr.push_back(json::parse(item));
        } catch (const json::exception&) {
          throw UsageError("bad list element '" + item + "' for " + leaf.option->get_name());
        }
      }
      return arr;
    }
    return text;  // left to the typed parser to reject
  }

  static void merge(json& into, const json& from, const std::string& where) {
    if (!from.is_object()) throw UsageError("config" + where + " must be a JSON object");
    for (auto it = from.begin(); it != from.end(); ++it) {
      if (!into.contains(it.key())) throw UsageError("unknown config key '" + where + it.key() + "'");
      json& slot = into[it.key()];
      if (slot.is_object()) merge(slot, *it, where + it.key() + ".");
      else slot = *it;
    }
  }

  CLI::App* app_;
  json defaults_;
  std::string config_path_;
  std::deque<std::string> storage_;
  std::vector<Leaf> leaves_;
};

// Split CLI-only keys off a resolved config before handing the rest to a typed parser.
json take(json& j, const std::string& key) {
  json v = j.at(key);
  j.erase(key);
  return v;
}

std::string need_path(const json& j, const std::string& key) {
  const std::string v = j.at(key).get<std::string>();
  if (v.empty()) throw UsageError(flag_name(key) + " is required");
  return v;
}

template <typename F>
auto typed(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(e.what());
  }
}

void echo(std::ostream& err, const json& config) { err << "effective config: " << config.dump() << "\n"; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_row(std::ostream& out, const LogRow& r) {
  out << "step " << r.step << " loss " << fmt("%.6f", r.loss_total) << " rec " << fmt("%.6f", r.loss_rec) << " fid "
      << fmt("%.6f", r.loss_fid);
  if (r.eval_psnr) out << " eval_psnr " << fmt("%.4f", *r.eval_psnr) << " eval_ssim " << fmt("%.4f", *r.eval_ssim);
  out << "\n";
}

// --- subcommands -----------------------------------------------------------

int cmd_synth(const json& j, std::ostream& out) {
  const fs::path dir = need_path(j, "out");
  const auto [seed, n, extent, shifted] = typed([&] {
    return std::tuple{json_u64(j.at("seed")), json_int(j.at("n")), json_int(j.at("extent")),
                      j.at("domain_shift").get<bool>()};
  });
  if (n < 1) throw UsageError("--n must be positive");
  std::vector<SynthPair> pairs = typed([&] { return synth_dataset(seed, n, extent); });
  if (shifted) {
    for (SynthPair& p : pairs) {
      ShiftedPair s = apply_domain_shift(p);
      p.lr = std::move(s.wide);
      p.hr = std::move(s.truth);
    }
  }
  write_dataset(pairs, dir);
  out << "wrote " << pairs.size() << " pairs to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(json j, std::ostream& out) {
  const std::string data = take(j, "data").get<std::string>();
  const fs::path dir = need_path(j, "out");
  j.erase("out");
  const TrainConfig config = typed([&] { return TrainConfig::from_json(j); });
  std::vector<SynthPair> pairs;
  if (!data.empty()) pairs = read_dataset(data);
  const TrainResult r = train(config, data.empty() ? nullptr : &pairs, [&](const LogRow& row) { print_row(out, row); });
  fs::create_directories(dir);
  save_checkpoint(r.params, dir / "checkpoint.bin");
  write_log_csv(r.log, dir / "log.csv");
  std::ofstream(dir / "config.json") << config.to_json().dump(2) << "\n";
  out << "final eval_psnr " << fmt("%.4f", r.eval.mean_psnr) << " bicubic_psnr " << fmt("%.4f", r.eval.mean_bicubic_psnr)
      << " eval_ssim " << fmt("%.4f", r.eval.mean_ssim) << " mean_gate " << fmt("%.4f", r.eval.mean_gate) << "\n";
  out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_adapt(json j, std::ostream& out) {
  const fs::path checkpoint = need_path(j, "checkpoint"), data = need_path(j, "data"), dir = need_path(j, "out");
  for (const char* k : {"checkpoint", "data", "out"}) j.erase(k);
  const AdaptConfig config = typed([&] { return AdaptConfig::from_json(j); });
  const ModelParams<float> start = load_checkpoint(checkpoint);
  // lr.png is the wide capture and ref.png the tele view; hr.png is never read by the loss.
  std::vector<ShiftedPair> pairs;
  for (SynthPair& p : read_dataset(data)) pairs.push_back({std::move(p.lr), std::move(p.ref), std::move(p.hr)});
  const std::vector<Example> examples = make_examples(start, pairs);
  const AdaptResult r = adapt_sra(start, examples, config, [&](const LogRow& row) { print_row(out, row); });
  fs::create_directories(dir);
  save_checkpoint(r.params, dir / "checkpoint.bin");
  write_log_csv(r.log, dir / "log.csv");
  std::ofstream(dir / "config.json") << config.to_json().dump(2) << "\n";
  out << "sra_loss " << fmt("%.6f", r.loss_before) << " -> " << fmt("%.6f", r.loss_after) << " consistency "
      << fmt("%.6f", r.consistency_before) << " -> " << fmt("%.6f", r.consistency_after) << "\n";
  out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_infer(const json& j, std::ostream& out) {
  const fs::path lr_path = need_path(j, "lr"), checkpoint = need_path(j, "checkpoint"), sr_path = need_path(j, "out");
  const bool self_ref = typed([&] { return j.at("self_ref").get<bool>(); });
  const std::string ref_path = j.at("ref").get<std::string>(), debug = j.at("debug_dir").get<std::string>();
  if (self_ref == !ref_path.empty()) throw UsageError("give exactly one of --ref and --self-ref true");
  const ModelParams<float> p = load_checkpoint(checkpoint);
  const Tensor lr = read_png(lr_path).to_tensor();
  const Tensor ref = self_ref ? bicubic_resize(lr, Resample::Up2) : read_png(ref_path).to_tensor();
  const MatchContext<float> ctx = build_context(p, lr, ref);
  const ForwardTrace<float> t = forward(p, lr, ref, ctx);
  if (sr_path.has_parent_path()) fs::create_directories(sr_path.parent_path());
  write_png(Image::from_tensor(t.sr), sr_path);
  if (!debug.empty()) {
    const fs::path d = debug;
    fs::create_directories(d);
    write_png(Image::from_tensor(ctx.lr_up), d / "bicubic.png");
    write_png(Image::from_tensor(ctx.ref_matched), d / "ref_matched.png");
    write_png(Image::from_tensor(t.hf_aligned), d / "hf_aligned.png");
    write_png(Image::from_tensor(ctx.conf_hr), d / "confidence.png");
    write_png(Image::from_tensor(t.image_cache.gate), d / "gate.png");
    std::ofstream csv(d / "match.csv");
    csv << "lr_y,lr_x,ref_y,ref_x,confidence\n";
    const MatchResult& m = ctx.match;
    for (std::size_t i = 0; i < m.size(); ++i)
      csv << i / m.lr_w << "," << i % m.lr_w << "," << m.index[i] / m.ref_w << "," << m.index[i] % m.ref_w << ","
          << fmt("%.6f", m.confidence[i]) << "\n";
  }
  out << "wrote " << sr_path.string() << " (" << t.sr.w() << "x" << t.sr.h() << ") mean_gate "
      << fmt("%.4f", t.mean_gate()) << " mean_confidence " << fmt("%.4f", mean(ctx.conf_lr)) << "\n";
  return kExitOk;
}

int cmd_eval(const json& j, std::ostream& out) {
  const fs::path data = need_path(j, "data");
  const std::string checkpoint = j.at("checkpoint").get<std::string>();
  const std::vector<SynthPair> pairs = read_dataset(data);
  if (pairs.empty()) throw Error("no pairs under " + data.string());
  EvalResult r;
  if (!checkpoint.empty()) {
    const ModelParams<float> p = load_checkpoint(checkpoint);
    r = evaluate(p, make_examples(p, pairs));
  } else {
    // Bicubic only: the same metrics evaluate() reports for its baseline.
    for (const SynthPair& s : pairs) {
      const Image bic = Image::from_tensor(bicubic_resize(s.lr.to_tensor(), Resample::Up2));
      r.bicubic_psnr.push_back(psnr(bic, s.hr));
      r.bicubic_ssim.push_back(ssim(bic, s.hr));
      r.mean_bicubic_psnr += r.bicubic_psnr.back() / pairs.size();
      r.mean_bicubic_ssim += r.bicubic_ssim.back() / pairs.size();
    }
  }
  const bool model = !checkpoint.empty();
  out << (model ? "pair,psnr,ssim,bicubic_psnr,bicubic_ssim\n" : "pair,bicubic_psnr,bicubic_ssim\n");
  char name[32];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(name, sizeof name, "pair_%04zu", i);
    out << name;
    if (model) out << "," << fmt("%.6f", r.psnr[i]) << "," << fmt("%.6f", r.ssim[i]);
    out << "," << fmt("%.6f", r.bicubic_psnr[i]) << "," << fmt("%.6f", r.bicubic_ssim[i]) << "\n";
  }
  out << "mean";
  if (model) out << "," << fmt("%.6f", r.mean_psnr) << "," << fmt("%.6f", r.mean_ssim);
  out << "," << fmt("%.6f", r.mean_bicubic_psnr) << "," << fmt("%.6f", r.mean_bicubic_ssim) << "\n";
  return kExitOk;
}

int cmd_gradcheck(const json& j, std::ostream& out) {
  const auto [seed, instances] = typed([&] { return std::pair{json_u64(j.at("seed")), json_int(j.at("instances"))}; });
  if (instances < 1) throw UsageError("--instances must be positive");
  bool ok = true;
  out << "op,instances,max_rel_error,tolerance,status\n";
  for (const gradcheck::CheckResult& r : gradcheck::run_suite(seed, instances)) {
    ok = ok && r.passed();
    out << r.name << "," << r.instances << "," << fmt("%.3e", r.max_rel_error) << "," << fmt("%.0e", r.tolerance) << ","
        << (r.passed() ? "PASS" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitRuntime;
}

int cmd_bench_match(const json& j, std::ostream& out) {
  struct Opts {
    std::uint64_t seed;
    int channels, tile, margin, repeats;
    std::vector<int> extents;
  };
  const Opts o = typed([&] {
    Opts o{json_u64(j.at("seed")), json_int(j.at("channels")), json_int(j.at("tile")), json_int(j.at("margin")),
           json_int(j.at("repeats")), {}};
    for (const json& e : j.at("extents")) o.extents.push_back(json_int(e));
    return o;
  });
  if (o.channels < 1 || o.tile < 1 || o.margin < 0 || o.repeats < 1 || o.extents.empty())
    throw UsageError("bench-match needs channels, tile, repeats >= 1, margin >= 0 and at least one extent");
  for (int e : o.extents)
    if (e < 3) throw UsageError("extents must be >= 3");
  const std::string path = j.at("out").get<std::string>();
  std::ofstream file;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw Error("cannot write " + path);
  }
  std::ostream& csv = path.empty() ? out : file;
  csv << "extent,mode,tile,margin,seconds,peak_similarity_bytes,identical_to_full\n";
  std::mt19937_64 rng(o.seed);
  for (int e : o.extents) {
    const TensorD a = gradcheck::random_tensor(Shape{1, o.channels, e, e}, rng);
    const TensorD b = gradcheck::random_tensor(Shape{1, o.channels, e, e}, rng);
    auto time = [&](auto&& f) {
      double best = 1e300;
      MatchResult m;
      for (int r = 0; r < o.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        m = f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      return std::pair{best, m};
    };
    const auto [full_s, full] = time([&] { return match_features(a, b); });
    const auto [tiled_s, tiled] = time([&] { return tiled_match(a, b, o.tile, o.margin); });
    const std::size_t cells = static_cast<std::size_t>(e) * e;
    const bool same = full.index == tiled.index && full.confidence == tiled.confidence;
    csv << e << ",full,,," << fmt("%.6f", full_s) << "," << cells * cells * sizeof(double) << ",1\n";
    csv << e << ",tiled," << o.tile << "," << o.margin << "," << fmt("%.6f", tiled_s) << ","
        << tiled_peak_similarity_bytes(e, e, e, e, o.tile, o.margin) << "," << (same ? 1 : 0) << "\n";
  }
  return kExitOk;
}

struct Command {
  const char* name;
  const char* help;
  json defaults;
};

std::vector<Command> commands() {
  json train = TrainConfig{}.to_json();
  train["data"] = "";
  train["out"] = "";
  json adapt = AdaptConfig{}.to_json();
  adapt["checkpoint"] = "";
  adapt["data"] = "";
  adapt["out"] = "";
  return {
      {"synth", "Write deterministic synthetic pairs",
       {{"seed", 1}, {"n", 8}, {"extent", 64}, {"out", ""}, {"domain_shift", false}}},
      {"train", "Train a model and write checkpoint.bin, log.csv and config.json", train},
      {"adapt", "Fine-tune a checkpoint with the self-supervised SRA loss", adapt},
      {"infer", "Super-resolve one LR image with a reference",
       {{"lr", ""}, {"ref", ""}, {"self_ref", false}, {"checkpoint", ""}, {"out", "sr.png"}, {"debug_dir", ""}}},
      {"eval", "PSNR/SSIM per pair and means", {{"data", ""}, {"checkpoint", ""}}},
      {"gradcheck", "Finite-difference check of every differentiable op", {{"seed", 1}, {"instances", 20}}},
      {"bench-match", "Time full vs tiled matching and report peak similarity memory (CSV)",
       {{"seed", 1}, {"extents", {16, 32, 48, 64}}, {"channels", 16}, {"tile", 16}, {"margin", 8}, {"repeats", 3},
        {"out", ""}}},
  };
}

int dispatch(const std::string& name, const json& j, std::ostream& out) {
  if (name == "synth") return cmd_synth(j, out);
  if (name == "train") return cmd_train(j, out);
  if (name == "adapt") return cmd_adapt(j, out);
  if (name == "infer") return cmd_infer(j, out);
  if (name == "eval") return cmd_eval(j, out);
  if (name == "gradcheck") return cmd_gradcheck(j, out);
  return cmd_bench_match(j, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reference-based super-resolution", args.empty() ? "refsr" : args[0]};
  app.require_subcommand(1);
  std::vector<Command> cmds = commands();
  std::vector<std::pair<CLI::App*, std::unique_ptr<ConfigFlags>>> subs;
  for (const Command& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    subs.emplace_back(sub, std::make_unique<ConfigFlags>(sub, c.defaults));
  }
  try {
    // CLI11 consumes a reversed argument list without the program name.
    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (auto& [sub, flags] : subs) {
    if (!sub->parsed()) continue;
    json config;
    try {
      config = flags->resolve();
      echo(err, config);
      return dispatch(sub->get_name(), config, out);
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace refsr::cli
