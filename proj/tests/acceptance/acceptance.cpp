// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <random>
#include <sstream>
#include <string>

#include "darkforge/alignment.hpp"
#include "darkforge/checkpoint.hpp"
#include "darkforge/gradcheck_registry.hpp"
#include "darkforge/metrics.hpp"
#include "darkforge/models.hpp"
#include "darkforge/nn_blocks.hpp"
#include "darkforge/parallel.hpp"
#include "darkforge/raw_core.hpp"
#include "darkforge/raw_io.hpp"
#include "darkforge/synth_mcr.hpp"
#include "darkforge/training.hpp"

using namespace darkforge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  std::printf("%s criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool tensors_bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (!bits_equal(a.data()[i], b.data()[i])) return false;
  return true;
}

// 1 ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto results = run_gradchecks(gradcheck_registry());
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
    if (!(r.max_rel_error < 1e-4)) failed += " " + r.name;
  }
  Verdict v;
  v.pass = failed.empty() && elapsed < 60.0;
  v.detail = fmt("%zu blocks, max rel err %.2e in %s, %.1f s", results.size(), worst, worst_name.c_str(), elapsed);
  if (!failed.empty()) v.detail += ", failing:" + failed;
  return v;
}

// 2 ---------------------------------------------------------------------------

Verdict roundtrips() {
  constexpr int kCases = 1000;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> half(1, 24);
  std::size_t bad_pack = 0, bad_d2s = 0, bad_ckpt = 0, bad_raw = 0;

  for (CfaPhase phase : {CfaPhase::RGGB, CfaPhase::GRBG, CfaPhase::GBRG, CfaPhase::BGGR})
    for (int i = 0; i < kCases; ++i) {
      Plane p(2 * half(rng), 2 * half(rng));
      for (double& x : p.data) x = u(rng);
      if (!(unpack_raw(pack_raw(p, phase), phase) == p)) ++bad_pack;
    }

  for (int i = 0; i < kCases; ++i) {
    const Shape shape = {1 + half(rng) % 2, 4 * (1 + half(rng) % 3), half(rng) % 7 + 1, half(rng) % 7 + 1};
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = u(rng);
    const Tensor t = Tensor::from_data(shape, v);
    const Tensor back = nn::space_to_depth(nn::depth_to_space(t, 2), 2);
    const Shape wide = {shape[0], shape[1] / 4, 2 * shape[2], 2 * shape[3]};
    const Tensor w = Tensor::from_data(wide, v);
    const Tensor back_w = nn::depth_to_space(nn::space_to_depth(w, 2), 2);
    if (!tensors_bit_equal(back, t) || !tensors_bit_equal(back_w, w)) ++bad_d2s;
  }

  const double specials[] = {0.0, -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
                             -std::numeric_limits<double>::infinity(), 1e-300};
  for (int i = 0; i < kCases; ++i) {
    NamedTensors named;
    const std::size_t count = 1 + half(rng) % 4;
    for (std::size_t k = 0; k < count; ++k) {
      const Shape shape = {half(rng) % 5 + 1, half(rng) % 5 + 1};
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = (rng() % 16 == 0) ? specials[rng() % 6] : u(rng) * std::pow(10.0, double(rng() % 40) - 20);
      named.emplace_back("t" + std::to_string(i) + "." + std::to_string(k), Tensor::from_data(shape, v));
    }
    std::stringstream ss;
    write_tensors(ss, named);
    const NamedTensors back = read_tensors(ss);
    bool ok = back.size() == named.size();
    for (std::size_t k = 0; ok && k < named.size(); ++k)
      ok = back[k].first == named[k].first && tensors_bit_equal(back[k].second, named[k].second);
    if (!ok) ++bad_ckpt;
  }

  const fs::path dir = fs::temp_directory_path() / ("darkforge_acceptance_raw_" + std::to_string(rng()));
  fs::create_directories(dir);
  const CfaPhase phases[] = {CfaPhase::RGGB, CfaPhase::GRBG, CfaPhase::GBRG, CfaPhase::BGGR, CfaPhase::Mono};
  for (int i = 0; i < kCases; ++i) {
    BayerRaw r;
    r.width = 2 * half(rng);
    r.height = 2 * half(rng);
    r.bit_depth = rng() % 2 ? 16 : 8;
    r.white_level = (1u << r.bit_depth) - 1u - static_cast<std::uint32_t>(rng() % 8);
    r.black_level = static_cast<std::uint32_t>(rng() % 16);
    r.cfa_phase = phases[rng() % 5];
    r.exposure_time = std::ldexp(1.0, -static_cast<int>(rng() % 12));
    std::uniform_int_distribution<unsigned> code(0, r.white_level);
    r.data.resize(r.width * r.height);
    for (auto& c : r.data) c = static_cast<std::uint16_t>(code(rng));
    const fs::path path = dir / ("f" + std::to_string(i) + ".raw");
    write_raw(path, r);
    if (!(read_raw(path) == r)) ++bad_raw;
  }
  fs::remove_all(dir);

  Verdict v;
  v.pass = bad_pack + bad_d2s + bad_ckpt + bad_raw == 0;
  v.detail = fmt("mismatches: pack/unpack %zu of 4x%d, depth/space %zu of %d, checkpoint %zu of %d, raw io %zu of %d",
                 bad_pack, kCases, bad_d2s, kCases, bad_ckpt, kCases, bad_raw, kCases);
  return v;
}

// 3 ---------------------------------------------------------------------------

Verdict metric_oracles() {
  Plane a(64, 64), b(64, 64);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = double(i % 230) / 255.0;
    b.data[i] = a.data[i] + 16.0 / 255.0;
  }
  const double p = metrics::psnr(a, b);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Plane r(48, 40);
  for (double& x : r.data) x = u(rng);
  const double s = metrics::ssim(r, r);
  Plane board(64, 64), ramp(64, 64);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      board.at(y, x) = double((x + y) % 2);
      ramp.at(y, x) = double(x + y) / 126.0;
    }
  const double cb = metrics::checkerboard_score(board), cr = metrics::checkerboard_score(ramp);
  Verdict v;
  v.pass = std::abs(p - 24.049) <= 1e-3 && s == 1.0 && cb > 0.9 && cr < 0.05;
  v.detail = fmt("PSNR(16/255 offset) %.5f dB, SSIM(a,a) %.17g, checkerboard %.4f, ramp %.4f", p, s, cb, cr);
  return v;
}

// 4 and 6 ---------------------------------------------------------------------

struct Overfit {
  TrainResult result;
  double l1_mono = 0, l1_rgb = 0, psnr = 0, checkerboard = 0, seconds = 0;
};

constexpr std::size_t kSide = 64;
constexpr std::size_t kOverfitSteps = 500;

Overfit overfit(std::uint64_t seed, bool use_ca) {
  const fs::path dir = fs::temp_directory_path() / ("darkforge_acceptance_fit_" + std::to_string(seed) + "_" +
                                                    std::to_string(use_ca) + "_" + std::to_string(std::random_device{}()));
  SceneSpec scene;
  scene.id = "fit";
  scene.source = make_scene(kSide, kSide, seed);
  scene.input_exposures = {1.0 / 32};
  NoiseModel noise;
  noise.seed = seed;
  generate_dataset({scene}, noise, dir);
  const McrDataset data(dir);

  ModelConfig model;
  model.use_ca = use_ca;
  TrainConfig tc;
  tc.crop = kSide;
  tc.batch = 1;
  tc.steps = kOverfitSteps;
  tc.lr_initial = 1e-4;
  tc.lr_switch_step = kOverfitSteps;
  tc.seed = seed;

  Overfit o;
  const auto t0 = Clock::now();
  o.result = train(data, model, tc);
  o.seconds = seconds_since(t0);

  const TrainingSample s = data.get(0);
  const Tensor mono_t = mono_tensor(s.mono_gt), rgb_t = rgb_tensor(s.rgb_gt);
  {
    NoGradGuard ng;
    const PipelineOutput raw_out = pipeline_forward(s.input, s.ratio, o.result.params, model, Mode::Train);
    o.l1_mono = l1_loss(raw_out.mono, mono_t).item();
    o.l1_rgb = l1_loss(raw_out.rgb, rgb_t).item();
    const PipelineOutput out = pipeline_forward(s.input, s.ratio, o.result.params, model, Mode::Infer);
    RgbImage pred(kSide, kSide);
    std::copy(out.rgb.data().begin(), out.rgb.data().end(), pred.data.begin());
    o.psnr = metrics::psnr(pred, s.rgb_gt);
    o.checkerboard = metrics::checkerboard_score(pred);
  }
  fs::remove_all(dir);
  return o;
}

bool same_run(const TrainResult& a, const TrainResult& b) {
  if (a.curve.size() != b.curve.size()) return false;
  for (std::size_t i = 0; i < a.curve.size(); ++i)
    if (!bits_equal(a.curve[i].loss_total, b.curve[i].loss_total)) return false;
  const auto& ea = a.params.entries();
  const auto& eb = b.params.entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].first != eb[i].first || !tensors_bit_equal(ea[i].second, eb[i].second)) return false;
  return true;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

Verdict overfit_contract(const Overfit& first) {
  const Overfit again = overfit(kSeeds[0], true);
  const bool deterministic = same_run(first.result, again.result);
  Verdict v;
  v.pass = first.l1_rgb < 0.03 && first.l1_mono < 0.03 && first.psnr > 30.0 && first.seconds < 600.0 && deterministic;
  v.detail = fmt("L1 rgb %.4f, L1 mono %.4f, PSNR %.2f dB, %.0f s, rerun %s", first.l1_rgb, first.l1_mono, first.psnr,
                 first.seconds, deterministic ? "bit-identical" : "DIFFERS");
  return v;
}

Verdict checkerboard_regression(const Overfit& first) {
  int wins = 0;
  std::string rows;
  for (std::uint64_t seed : kSeeds) {
    const double with_ca = seed == kSeeds[0] ? first.checkerboard : overfit(seed, true).checkerboard;
    const double without = overfit(seed, false).checkerboard;
    wins += with_ca < without;
    rows += fmt("%sseed %llu %.3e vs %.3e", rows.empty() ? "" : "; ", static_cast<unsigned long long>(seed), with_ca,
                without);
  }
  Verdict v;
  v.pass = wins >= 4;
  v.detail = fmt("CA lower in %d/5 seeds: ", wins) + rows;
  return v;
}

// 5 ---------------------------------------------------------------------------

Verdict ablation_wiring() {
  const RgbImage scene = make_scene(32, 32, 11);
  std::mt19937_64 rng(11);
  TrainingSample s;
  s.input = expose(mosaic(scene, CfaPhase::RGGB), 1.0 / 32, 0.375, NoiseModel{}, rng);
  s.mono_gt = MonoRaw(rgb_to_mono(scene));
  s.rgb_gt = scene;
  s.ratio = 12.0;
  const InMemoryDataset data({s});

  TrainConfig tc;
  tc.crop = 32;
  tc.steps = 10;
  tc.seed = 5;

  std::string problems;
  std::size_t built = 0, trained = 0;
  for (const auto& name : preset_names()) {
    const ModelConfig cfg = preset_config(name);
    build_params(cfg, 0);
    ++built;
    bool finite = true, mono_seen = false;
    double l2_gap = 0;
    TrainOptions opts;
    opts.observer = [&](const StepView& view) {
      finite = finite && std::isfinite(view.record.loss_total);
      mono_seen = mono_seen || view.record.loss_mono.has_value();
      if (name == "l2" && view.record.step == 0) {
        double se_m = 0, se_c = 0;
        for (std::size_t i = 0; i < view.mono_target.numel(); ++i)
          se_m += std::pow(view.output.mono.data()[i] - view.mono_target.data()[i], 2);
        for (std::size_t i = 0; i < view.rgb_target.numel(); ++i)
          se_c += std::pow(view.output.rgb.data()[i] - view.rgb_target.data()[i], 2);
        const double mse = se_m / double(view.mono_target.numel()) + se_c / double(view.rgb_target.numel());
        l2_gap = std::abs(mse - view.record.loss_total);
      }
    };
    try {
      const TrainResult r = train(data, cfg, tc, opts);
      for (const auto& [pname, t] : r.params.entries())
        for (double x : t.data()) finite = finite && std::isfinite(x);
      if (finite && r.curve.size() == 10) ++trained;
      else problems += " " + name + ":non-finite";
    } catch (const std::exception& e) {
      problems += " " + name + ":" + e.what();
    }
    if (name == "wo-dbf" && mono_seen) problems += " wo-dbf:mono-loss";
    if (name != "wo-dbf" && !mono_seen) problems += " " + name + ":no-mono-loss";
    if (name == "l2" && !(l2_gap <= 1e-12)) problems += fmt(" l2:gap=%.3e", l2_gap);
  }

  const ModelParams base = build_params(preset_config("baseline"), 0);
  const ModelParams no_ca = build_params(preset_config("wo-ca"), 0);
  std::size_t ca_total = 0;
  for (const auto& [name, t] : base.entries())
    if (name.find(".ca.") != std::string::npos) ca_total += t.numel();
  const std::size_t delta = base.count() - no_ca.count();
  if (delta != ca_total || ca_total == 0) problems += fmt(" wo-ca:delta=%zu,ca=%zu", delta, ca_total);

  Verdict v;
  v.pass = problems.empty() && built == 7 && trained == 7;
  v.detail = fmt("%zu/7 built, %zu/7 trained 10 steps, wo-ca delta %zu = CA params %zu", built, trained, delta, ca_total);
  if (!problems.empty()) v.detail += ";" + problems;
  return v;
}

// 7 ---------------------------------------------------------------------------

Verdict homography_recovery() {
  constexpr int kTrials = 100;
  constexpr double kW = 640, kH = 480;
  int good = 0;
  double slowest = 0, worst = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    std::mt19937_64 rng(7000 + trial);
    std::uniform_real_distribution<double> u(-1, 1), ux(0, kW), uy(0, kH);
    std::normal_distribution<double> noise(0.0, 0.3);
    const double a = 0.1 * u(rng), s = 1 + 0.1 * u(rng);
    Eigen::Matrix3d h;
    h << s * std::cos(a), -s * std::sin(a) + 0.05 * u(rng), 20 * u(rng), s * std::sin(a), s * std::cos(a), 20 * u(rng),
        2e-4 * u(rng), 2e-4 * u(rng), 1;
    const Homography truth = Homography::from_matrix(h);
    std::vector<Correspondence> pairs;
    for (int i = 0; i < 200; ++i) {
      const Point2 p{ux(rng), uy(rng)};
      Point2 q = truth.apply(p);
      if (i < 60) {
        q = {ux(rng), uy(rng)};
      } else {
        q.x += noise(rng);
        q.y += noise(rng);
      }
      pairs.push_back({p, q, 1.0});
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    RansacOptions opts;
    opts.seed = static_cast<std::uint64_t>(trial);
    const auto t0 = Clock::now();
    double err = std::numeric_limits<double>::infinity();
    try {
      const HomographyFit fit = estimate_homography(pairs, opts);
      err = 0;
      for (Point2 c : {Point2{0, 0}, Point2{kW, 0}, Point2{0, kH}, Point2{kW, kH}}) {
        const Point2 x = fit.h.apply(c), y = truth.apply(c);
        err = std::max(err, std::hypot(x.x - y.x, x.y - y.y));
      }
    } catch (const std::exception&) {
    }
    const double dt = seconds_since(t0);
    slowest = std::max(slowest, dt);
    worst = std::max(worst, err);
    good += err < 1.0 && dt < 5.0;
  }
  Verdict v;
  v.pass = good >= 99;
  v.detail = fmt("%d/%d trials under 1 px, worst corner error %.3f px, slowest trial %.3f s", good, kTrials, worst,
                 slowest);
  return v;
}

// 8 ---------------------------------------------------------------------------

Verdict amplification_statistics() {
  constexpr int kDraws = 300;
  constexpr std::size_t kSideA = 32;
  NoiseModel noise;
  noise.bit_depth = 16;
  noise.shot_gain = 20000;
  noise.read_sigma = 1e-4;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.2, 0.6);
  Plane clean(kSideA, kSideA);
  for (double& x : clean.data) x = u(rng);
  double clean_mean = 0;
  for (double x : clean.data) clean_mean += x / double(clean.data.size());

  bool pass = true;
  std::string rows;
  for (double ratio : {2.0, 16.0, 96.0}) {
    double sum = 0, sq = 0;
    std::size_t clamped = 0;
    for (int d = 0; d < kDraws; ++d) {
      const BayerRaw frame = expose(clean, 0.375 / ratio, 0.375, noise, rng);
      const PackedRaw amp = amplify(pack_raw(normalize(frame), CfaPhase::RGGB), ratio);
      double m = 0;
      for (const auto& p : amp.planes)
        for (double x : p.data) {
          m += x;
          clamped += x >= 1.0 || x <= 0.0;
        }
      m /= double(clean.data.size());
      sum += m;
      sq += m * m;
    }
    const double mean = sum / kDraws;
    const double se = std::sqrt((sq / kDraws - mean * mean) * kDraws / (kDraws - 1) / kDraws);
    const double z = (mean - clean_mean) / se;
    pass = pass && std::abs(z) <= 3.0 && clamped == 0;
    rows += fmt("%sratio %g: %.6f vs %.6f (%.2f SE)", rows.empty() ? "" : "; ", ratio, mean, clean_mean, z);
  }
  return {pass, rows};
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limit();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  const auto t0 = Clock::now();
  int ran = 0;
  const auto run = [&](int id, const std::string& title, const std::function<Verdict()>& check) {
    if (!wanted(id)) return;
    ++ran;
    report(id, title, check);
  };
  std::optional<Overfit> first;
  const auto first_run = [&]() -> const Overfit& {
    if (!first) first = overfit(kSeeds[0], true);
    return *first;
  };
  run(1, "gradient correctness", gradients);
  run(2, "roundtrip exactness", roundtrips);
  run(3, "metric oracles", metric_oracles);
  run(4, "overfit reproduction", [&] { return overfit_contract(first_run()); });
  run(5, "ablation wiring", ablation_wiring);
  run(6, "checkerboard regression", [&] { return checkerboard_regression(first_run()); });
  run(7, "homography recovery", homography_recovery);
  run(8, "amplification statistics", amplification_statistics);
  std::printf("%d/%d criteria passed in %.0f s\n", ran - failures, ran, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
