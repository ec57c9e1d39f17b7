// Acceptance suite: one PASS/FAIL line per criterion with the measured values.
//
//   acceptance --work-dir DIR [--only 1,2,...] [--informational 7,8,9]
//
// Criteria listed in --informational are measured and reported but do not
// affect the exit status. The lines are also written to DIR/report_<ids>.txt.

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowloc/attention.hpp"
#include "flowloc/audio.hpp"
#include "flowloc/commands.hpp"
#include "flowloc/metrics.hpp"
#include "flowloc/model.hpp"
#include "flowloc/objective.hpp"
#include "flowloc/optical_flow.hpp"
#include "flowloc/tensor.hpp"

using namespace flowloc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * unit(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// -- 1. gradients -----------------------------------------------------------

// Largest relative error over every differentiable op at one random point.
double op_grad_errors(std::mt19937_64& rng) {
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0);
  std::vector<Tensor> ab{a, b};
  track(grad_check([](std::span<const Tensor> t) { return sum(add(t[0], t[1])); }, ab));
  track(grad_check([](std::span<const Tensor> t) { return sum(sub(t[0], t[1])); }, ab));
  track(grad_check([](std::span<const Tensor> t) { return sum(mul(t[0], t[1])); }, ab));
  track(grad_check([](std::span<const Tensor> t) { return sum(div(t[0], t[1])); }, ab));
  track(grad_check([](std::span<const Tensor> t) { return sum(logaddexp(t[0], t[1])); }, ab));
  track(grad_check([](std::span<const Tensor> t) { return dot(t[0], t[1]); }, ab));
  track(grad_check([](const Tensor& x) { return sum(mul(add(x, 0.3), -2.0)); }, a));
  track(grad_check([](const Tensor& x) { return sum(neg(x)); }, a));
  track(grad_check([](const Tensor& x) { return sum(sigmoid(mul(x, 3.0))); }, a));
  track(grad_check([](const Tensor& x) { return sum(exp(x)); }, a));
  track(grad_check([](const Tensor& x) { return sum(log(x)); }, b));
  track(grad_check([](const Tensor& x) { return mul(mean(x), sum(x)); }, a));
  track(grad_check([](const Tensor& x) { return sum(exp(reshape(x, {4, 3}))); }, a));
  track(grad_check([](const Tensor& x) { return sum(exp(select(x, 1))); }, a));
  track(grad_check(
      [](std::span<const Tensor> t) {
        std::vector<Tensor> s{t[0], mul(t[1], 2.0)};
        return sum(exp(stack(s)));
      },
      ab));

  // Kinked ops at points kept 0.1 away from the kink.
  std::vector<double> kinked(6);
  for (auto& v : kinked) v = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.15 + 0.8 * unit(rng));
  auto k = Tensor::from({6}, kinked);
  track(grad_check([](const Tensor& t) { return sum(mul(relu(t), t)); }, k));
  track(grad_check([](const Tensor& t) { return sum(mul(clamp_min(t, 0.05), t)); }, k));

  auto x = random_tensor({2, 6, 6}, rng), kernel = random_tensor({3, 2, 3, 3}, rng), bias = random_tensor({3}, rng);
  std::vector<Tensor> conv{x, kernel, bias};
  for (auto mode : {PadMode::zeros, PadMode::replicate}) {
    track(grad_check(
        [mode](std::span<const Tensor> t) {
          auto y = add_channel_bias(conv2d(t[0], t[1], 2, 1, mode), t[2]);
          return sum(mul(y, y));
        },
        conv));
  }
  track(grad_check([](const Tensor& t) { return sum(exp(global_avg_pool(t))); }, x));
  track(grad_check([](const Tensor& t) { return sum(exp(chw_to_hwc(t))); }, x));
  track(grad_check([](const Tensor& t) { return sum(exp(tile_channels(t, 5))); }, x));
  track(grad_check([](const Tensor& t) { return sum(exp(max_pool2d(t, 3))); }, x));

  auto f = random_tensor({2, 2, 5}, rng), w = random_tensor({3, 5}, rng), v = random_tensor({5}, rng);
  auto q = random_tensor({2, 2, 3}, rng), m = random_tensor({2, 2, 3, 4}, rng);
  std::vector<Tensor> fw{f, w}, fv{f, v}, qf{q, f}, qm{q, m};
  track(grad_check([](std::span<const Tensor> t) { return sum(exp(project(t[0], t[1]))); }, fw));
  track(grad_check([](std::span<const Tensor> t) { return sum(exp(matvec_lastdim(t[0], t[1]))); }, fv));
  track(grad_check([](std::span<const Tensor> t) { return sum(exp(outer_lastdim(t[0], t[1]))); }, qf));
  track(grad_check([](std::span<const Tensor> t) { return sum(exp(vecmat_lastdim(t[0], t[1]))); }, qm));
  auto weights = random_tensor({2, 2, 5}, rng);
  track(grad_check([&](const Tensor& t) { return dot(softmax_lastdim(t), weights); }, f));
  track(grad_check([&](const Tensor& t) { return dot(l2_normalize(t), weights); }, f));
  auto p = random_tensor({6}, rng), r = random_tensor({6}, rng);
  std::vector<Tensor> pr{p, r};
  track(grad_check([](std::span<const Tensor> t) { return cosine_similarity(t[0], t[1]); }, pr));
  return worst;
}

// Features -> attention -> similarity -> tri-map responses -> loss for a
// 2-sample batch of 4x4 maps with attention width 4, checked over every input.
double pipeline_grad_error(std::mt19937_64& rng) {
  const std::size_t c = 6;
  auto params = AttentionParams::init(c, 4, rng);
  std::vector<Tensor> in{random_tensor({4, 4, c}, rng, 0.0, 1.0), random_tensor({4, 4, c}, rng, 0.0, 1.0),
                         random_tensor({4, 4, c}, rng),           random_tensor({4, 4, c}, rng),
                         random_tensor({c}, rng, 0.0, 1.0),       random_tensor({c}, rng, 0.0, 1.0),
                         params.proj_k.detach(),                  params.proj_q.detach(),
                         params.proj_v.detach(),                  mul(params.proj_out.detach(), 10.0)};
  auto f = [](std::span<const Tensor> t) {
    AttentionParams p{t[6], t[7], t[8], t[9]};
    std::vector<Tensor> enh{enhance(t[0], cross_attention(t[0], t[2], p)),
                            enhance(t[1], cross_attention(t[1], t[3], p))};
    std::vector<Tensor> audio{l2_normalize(t[4]), l2_normalize(t[5])};
    SimilarityMatrix maps(2);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t j = 0; j < 2; ++j) maps[k].push_back(similarity_map(enh[k], audio[j]));
    return contrastive_loss(responses_selfsup(maps, TriMapConfig{0.3, 0.1, 0.2}));
  };
  return grad_check(f, in);
}

ModelConfig tiny_model(std::size_t d) {
  ModelConfig c;
  c.visual = {3, {2, 2, 2, 2, 4}, std::nullopt, false};
  c.audio = {1, {2, 2, 2, 2, 4}, std::nullopt, false};
  c.flow = {2, {2, 2, 2, 2, 4}, std::nullopt, false};
  c.attention_width = d;
  return c;
}

std::vector<ModelInput> random_batch(std::size_t b, std::size_t side, std::mt19937_64& rng) {
  std::vector<ModelInput> batch;
  for (std::size_t i = 0; i < b; ++i)
    batch.push_back({"s" + std::to_string(i), random_tensor({3, side, side}, rng), random_tensor({2, side, side}, rng),
                     random_tensor({1, kFreqBins, kSpecFrames}, rng, -3.0, 1.0)});
  return batch;
}

Outcome criterion_gradients() {
  const auto start = Clock::now();
  double ops = 0.0, pipeline = 0.0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    std::mt19937_64 rng(1000 + point);
    ops = std::max(ops, op_grad_errors(rng));
    pipeline = std::max(pipeline, pipeline_grad_error(rng));
  }
  const double elapsed = seconds_since(start);
  const double worst = std::max(ops, pipeline);
  return {worst <= 1e-4 && elapsed < 60.0,
          fmt("max rel err ops %.2e, pipeline %.2e over 10 points (tol 1e-4); %.1f s (limit 60 s)", ops, pipeline,
              elapsed)};
}

// -- 2. flow ----------------------------------------------------------------

double texture(double x, double y) {
  return 0.5 + 0.15 * std::sin(0.35 * x + 0.2 * y) + 0.12 * std::sin(0.27 * y - 0.41 * x + 1.0) +
         0.08 * std::cos(0.53 * x + 0.47 * y + 2.0);
}

Plane textured(std::size_t n, double tx, double ty) {
  Plane p(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) p.at(x, y) = texture(static_cast<double>(x) - tx, static_cast<double>(y) - ty);
  return p;
}

Outcome criterion_flow() {
  const auto start = Clock::now();
  const std::vector<std::pair<double, double>> shifts{{1, 0},  {0, -2},   {3, 1},    {-4, 0},  {2, -3},
                                                      {4, 4},  {0.5, 0},  {-1.5, 2.5}, {3.5, -0.5}, {-2.5, -3.5}};
  const std::size_t margin = 8;
  double worst = 0.0;
  for (auto [tu, tv] : shifts) {
    auto f = estimate_flow(textured(64, 0, 0), textured(64, tu, tv));
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t y = margin; y + margin < 64; ++y)
      for (std::size_t x = margin; x + margin < 64; ++x) {
        const std::size_t i = y * 64 + x;
        total += std::hypot(f.u[i] - tu, f.v[i] - tv);
        ++count;
      }
    worst = std::max(worst, total / static_cast<double>(count));
  }
  auto still = estimate_flow(textured(64, 0, 0), textured(64, 0, 0));
  const bool zero = std::all_of(still.u.begin(), still.u.end(), [](double v) { return v == 0.0; }) &&
                    std::all_of(still.v.begin(), still.v.end(), [](double v) { return v == 0.0; });
  const double elapsed = seconds_since(start);
  return {worst <= 0.5 && zero && elapsed < 10.0,
          fmt("worst interior EPE %.3f px over %zu shifts (tol 0.5); identical frames exactly zero: %s; %.1f s "
              "(limit 10 s)",
              worst, shifts.size(), zero ? "yes" : "no", elapsed)};
}

// -- 3. DSP -----------------------------------------------------------------

std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * t % n) / n);
    out[k] = acc;
  }
  return out;
}

Outcome criterion_dsp() {
  std::mt19937_64 rng(3);
  AudioClip clip;
  clip.samples.resize(48000);
  for (auto& s : clip.samples) s = 2.0 * unit(rng) - 1.0;
  const auto spec = log_spectrogram(clip);
  const auto window = hann_window(kFftSize);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t frame = rng() % 174;
    std::vector<double> seg(kFftSize);
    for (std::size_t i = 0; i < kFftSize; ++i) seg[i] = clip.samples[frame * kHopSize + i] * window[i];
    const auto ref = dft(seg);
    for (std::size_t k = 0; k < kFreqBins; ++k) {
      const double mag = std::exp(spec.at(k, frame)) - kLogFloor, r = std::abs(ref[k]);
      worst = std::max(worst, std::abs(mag - r) / std::max(r, 1e-300));
    }
  }

  AudioClip tone;
  tone.samples.resize(48000);
  for (std::size_t i = 0; i < tone.samples.size(); ++i) tone.samples[i] = 0.5 * std::sin(2.0 * M_PI * 1000.0 * i / kSampleRate);
  const auto ts = log_spectrogram(tone);
  std::size_t best = 0;
  for (std::size_t b = 1; b < ts.bins; ++b)
    if (ts.at(b, 50) > ts.at(best, 50)) best = b;
  const bool shape = spec.bins == 257 && spec.frames == 300 && spec.values.size() == 257u * 300u;
  return {worst <= 1e-9 && best == 32 && shape,
          fmt("STFT vs direct DFT max rel err %.2e over 5 frames (tol 1e-9); 1 kHz argmax bin %zu (want 32); "
              "shape %zux%zu (want 257x300)",
              worst, best, spec.bins, spec.frames)};
}

// -- 4. metrics -------------------------------------------------------------

bool covers(const Box& b, std::size_t px, std::size_t py) {
  const double cx = px + 0.5, cy = py + 0.5;
  return b.x <= cx && cx < b.x + b.w && b.y <= cy && cy < b.y + b.h;
}

double ciou_oracle(const Plane& pred, const Box& gt, double threshold) {
  const auto [lo, hi] = std::minmax_element(pred.values.begin(), pred.values.end());
  long inter = 0, uni = 0;
  for (std::size_t y = 0; y < pred.height; ++y)
    for (std::size_t x = 0; x < pred.width; ++x) {
      const double n = *hi > *lo ? (pred.at(x, y) - *lo) / (*hi - *lo) : 1.0;
      const bool p = n >= threshold, g = covers(gt, x, y);
      inter += p && g;
      uni += p || g;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double auc_oracle(const std::vector<double>& c) {
  double total = 0.0;
  for (int i = 1; i <= 20; ++i) {
    int hits = 0;
    for (double v : c) hits += v >= i / 20.0;
    total += static_cast<double>(hits) / static_cast<double>(c.size());
  }
  return total / 20.0;
}

Box random_box(std::mt19937_64& rng, std::size_t side) {
  std::uniform_int_distribution<int> pos(0, static_cast<int>(side) - 10), size(5, static_cast<int>(side) / 2);
  Box b{double(pos(rng)), double(pos(rng)), double(size(rng)), double(size(rng))};
  b.w = std::min(b.w, side - b.x);
  b.h = std::min(b.h, side - b.y);
  return b;
}

Outcome criterion_metrics() {
  std::mt19937_64 rng(4);
  std::size_t ciou_match = 0, auc_match = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t side = 40 + rng() % 60;
    const Box gt = random_box(rng, side), pb = random_box(rng, side);
    Plane pred(side, side);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) pred.at(x, y) = (covers(pb, x, y) ? 0.6 : 0.0) + 0.5 * unit(rng);
    const std::vector<Box> boxes{gt};
    ciou_match += ciou(pred, consensus_map(boxes, 1, side, side)) == ciou_oracle(pred, gt, 0.5);
    std::vector<double> values(1 + rng() % 30);
    for (auto& v : values) v = rng() % 4 == 0 ? (rng() % 21) / 20.0 : unit(rng);
    auc_match += auc(values) == auc_oracle(values);
  }
  Plane worked(200, 200);
  for (std::size_t y = 0; y < 100; ++y)
    for (std::size_t x = 0; x < 100; ++x) worked.at(x, y) = 1.0;
  const std::vector<Box> gt{{50, 50, 100, 100}};
  const double w = ciou(worked, consensus_map(gt, 1, 200, 200));
  return {ciou_match == 20 && auc_match == 20 && w == 1.0 / 7.0,
          fmt("ciou exact matches %zu/20, auc exact matches %zu/20; worked case %.15f (want 1/7 = %.15f)", ciou_match,
              auc_match, w, 1.0 / 7.0)};
}

// -- 5. attention -----------------------------------------------------------

Outcome criterion_attention() {
  std::mt19937_64 rng(5);
  const std::size_t c = 128, d = 64;
  auto params = AttentionParams::init(c, d, rng);
  auto beta = attention_weights(random_tensor({7, 7, c}, rng, 0.0, 2.0), random_tensor({7, 7, c}, rng, -2.0, 2.0),
                                params);
  double worst = 0.0;
  for (std::size_t row = 0; row < beta.size() / d; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += beta[row * d + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }

  LocalizationModel model(tiny_model(1), 11);
  auto batch = random_batch(1, 128, rng);
  ModelInput other = batch[0];
  other.flow = random_tensor({2, 128, 128}, rng, -3.0, 3.0);
  const auto a = model.localize(batch[0]), b = model.localize(other);
  const bool identical = std::equal(a.data().begin(), a.data().end(), b.data().begin());
  return {worst <= 1e-12 && identical,
          fmt("beta row-sum max deviation %.2e (tol 1e-12); d=1 S^enh bit-identical for two flows: %s", worst,
              identical ? "yes" : "no")};
}

// -- 6. loss ----------------------------------------------------------------

Outcome criterion_loss() {
  std::mt19937_64 rng(6);
  double equal_worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double v = 6.0 * unit(rng) - 3.0;
    BatchResponses r{{Tensor::scalar(v)}, {Tensor::scalar(v)}};
    equal_worst = std::max(equal_worst, std::abs(contrastive_loss(r).item() - std::log(2.0)));
  }
  const std::size_t b = 5;
  std::vector<double> pos(b), neg(b);
  for (std::size_t k = 0; k < b; ++k) pos[k] = 2.0 * unit(rng) - 1.0, neg[k] = 4.0 * unit(rng) - 3.0;
  auto loss = [&](const std::vector<double>& p, const std::vector<double>& n) {
    BatchResponses r;
    for (std::size_t k = 0; k < b; ++k) r.pos.push_back(Tensor::scalar(p[k])), r.neg.push_back(Tensor::scalar(n[k]));
    return contrastive_loss(r).item();
  };
  const double base = loss(pos, neg);
  std::size_t good = 0;
  for (std::size_t k = 0; k < b; ++k) {
    auto p = pos, n = neg;
    p[k] += 0.1;
    n[k] += 0.1;
    good += loss(p, neg) < base;
    good += loss(pos, n) > base;
  }
  return {equal_worst <= 1e-12 && good == 2 * b,
          fmt("Pos=Neg loss max |L - log 2| %.2e (tol 1e-12); monotone responses %zu/%zu", equal_worst, good, 2 * b)};
}

// -- training criteria ------------------------------------------------------

struct Workspace {
  fs::path root;

  fs::path dataset(const std::string& name, const std::string& variant, std::size_t count, std::uint64_t seed,
                   const std::string& split) const {
    const auto dir = root / "data" / name;
    if (!fs::exists(dir / "manifest.tsv")) {
      std::ostringstream sink;
      cmd_synth(SynthArgs{std::nullopt, variant, count, seed, split, dir}, sink);
    }
    return dir / "manifest.tsv";
  }
};

RunConfig train_config(ModelVariant variant, std::size_t epochs, std::uint64_t seed, const fs::path& cache) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.model.variant = variant;
  cfg.train.epochs = epochs;
  cfg.train.batch_size = 32;
  cfg.paths.flow_cache = cache;
  cfg.finalize();
  return cfg;
}

struct TrainedEval {
  double ciou = 0.0;
  double auc = 0.0;
  double train_seconds = 0.0;
};

TrainedEval train_and_eval(const RunConfig& cfg, const fs::path& train, const fs::path& test, const fs::path& out) {
  std::ostringstream sink;
  const auto start = Clock::now();
  auto summary = cmd_train(TrainArgs{cfg, train, out, std::nullopt}, sink);
  const double elapsed = seconds_since(start);
  auto result = cmd_eval(EvalArgs{cfg, summary.final_checkpoint, test, out / "eval.txt", EvalBaseline::model}, sink);
  return {result.ciou_at_05, result.auc, elapsed};
}

Outcome criterion_end_to_end(const Workspace& ws) {
  const auto train = ws.dataset("standard_train", "standard", 500, 101, "train");
  const auto test = ws.dataset("standard_test", "standard", 100, 102, "test");
  const auto cfg = train_config(ModelVariant::flow, 30, 7, ws.root / "flow_cache" / "standard");
  const auto r = train_and_eval(cfg, train, test, ws.root / "runs" / "c7");
  return {r.ciou >= 0.8 && r.train_seconds <= 1800.0,
          fmt("flow variant, c=128, d=64, 30 epochs, batch 32: cIoU@0.5 %.3f (need >= 0.8), AUC %.3f; training %.0f s "
              "(limit 1800 s)",
              r.ciou, r.auc, r.train_seconds)};
}

// Ablation pairs use a reduced protocol: 200 training and 100 held-out
// scenes, 10 epochs, batch 32, seeds 1-3.
Outcome ablation(const Workspace& ws, const std::string& split, ModelVariant better, ModelVariant worse,
                 double margin, const char* label) {
  const auto train = ws.dataset(split + "_train", split, 200, 201, "train");
  const auto test = ws.dataset(split + "_test", split, 100, 202, "test");
  const auto cache = ws.root / "flow_cache" / split;
  std::string detail = std::string(label) + ":";
  bool pass = true, chance = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto run = [&](ModelVariant v) {
      const auto out = ws.root / "runs" / (split + "_" + variant_name(v) + "_" + std::to_string(seed));
      return train_and_eval(train_config(v, 10, seed, cache), train, test, out).ciou;
    };
    const double hi = run(better), lo = run(worse);
    pass = pass && hi - lo >= margin;
    chance = chance && std::max(hi, lo) <= 0.05;
    detail += fmt(" seed %llu %.3f vs %.3f;", static_cast<unsigned long long>(seed), hi, lo);
  }
  detail += fmt(" required gap >= %.2f on every seed", margin);
  if (chance) detail += "; both variants at chance (<= 0.05) on every seed, so the comparison carries no signal";
  return {pass, detail};
}

Outcome criterion_nonsalient(const Workspace& ws) {
  return ablation(ws, "nonsalient", ModelVariant::flow, ModelVariant::no_flow, 0.10,
                  "non-salient split cIoU@0.5 flow vs no-flow");
}

Outcome criterion_environment(const Workspace& ws) {
  return ablation(ws, "environment", ModelVariant::flow, ModelVariant::maxpool_flow, 0.0,
                  "environment split cIoU@0.5 learnable vs max-pool flow encoder");
}

std::string loss_trace(const fs::path& log) {
  std::ifstream in(log);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind('\t')) + "\n";
  return out;
}

Outcome criterion_determinism(const Workspace& ws) {
  const auto train = ws.dataset("determinism", "standard", 12, 301, "train");
  auto cfg = train_config(ModelVariant::flow, 2, 42, ws.root / "flow_cache" / "determinism");
  cfg.train.batch_size = 4;
  std::vector<std::string> traces;
  for (const char* name : {"det_a", "det_b"}) {
    const auto out = ws.root / "runs" / name;
    fs::remove_all(out);
    std::ostringstream sink;
    cmd_train(TrainArgs{cfg, train, out, std::nullopt}, sink);
    traces.push_back(loss_trace(out / "train_log.tsv"));
  }
  const auto steps = std::count(traces[0].begin(), traces[0].end(), '\n') - 1;
  return {traces[0] == traces[1] && steps > 0,
          fmt("two seeded cmd_train runs, %ld logged steps: loss traces %s", static_cast<long>(steps),
              traces[0] == traces[1] ? "bit-identical" : "differ")};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowloc acceptance suite"};
  std::string work_dir, only, informational;
  app.add_option("--work-dir", work_dir, "scratch directory for datasets and runs")->required();
  app.add_option("--only", only, "comma-separated criteria to run (default: all)");
  app.add_option("--informational", informational, "criteria reported without affecting the exit status");
  CLI11_PARSE(app, argc, argv);

  Workspace ws{fs::absolute(work_dir)};
  fs::create_directories(ws.root);
  const auto selected = parse_list(only.empty() ? "1,2,3,4,5,6,7,8,9,10" : only);
  const auto advisory = parse_list(informational);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", criterion_gradients},
      {"flow accuracy", criterion_flow},
      {"DSP correctness", criterion_dsp},
      {"metric oracle equivalence", criterion_metrics},
      {"attention semantics", criterion_attention},
      {"loss semantics", criterion_loss},
      {"end-to-end synthetic localization", [&] { return criterion_end_to_end(ws); }},
      {"non-salient mover ablation", [&] { return criterion_nonsalient(ws); }},
      {"environment-motion flow encoder ablation", [&] { return criterion_environment(ws); }},
      {"determinism", [&] { return criterion_determinism(ws); }},
  };

  std::string tag;
  for (int id : selected) tag += (tag.empty() ? "" : "_") + std::to_string(id);
  std::ofstream report(ws.root / ("report_" + tag + ".txt"));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool counted = !advisory.count(id);
    if (!o.pass && counted) ++failures;
    std::ostringstream line;
    line << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": " << o.detail
         << fmt(" (%.0f s)", seconds_since(start)) << (counted ? "" : " [informational]");
    std::cout << line.str() << std::endl;
    report << line.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
