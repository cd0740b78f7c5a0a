#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "vidann/error.hpp"
#include "vidann/guidance.hpp"
#include "vidann/random.hpp"

namespace vidann {

namespace {

// Offsets of the parameter blocks inside RankingHeadParams::values.
struct Layout {
  std::size_t conv_w, conv_b, w1, b1, w2, b2, total;
  std::size_t patch;   // kernel * kernel * in_channels
  std::size_t concat;  // conv_channels * frames

  explicit Layout(const HeadArchitecture& a) {
    patch = static_cast<std::size_t>(a.kernel) * a.kernel * a.in_channels;
    concat = static_cast<std::size_t>(a.conv_channels) * a.frames;
    conv_w = 0;
    conv_b = conv_w + patch * a.conv_channels;
    w1 = conv_b + a.conv_channels;
    b1 = w1 + concat * a.hidden;
    w2 = b1 + a.hidden;
    b2 = w2 + a.hidden;
    total = b2 + 1;
  }
};

void check_arch(const HeadArchitecture& a) {
  if (a.in_channels < 1 || a.conv_channels < 1 || a.kernel < 1 || a.frames < 1 || a.hidden < 1) {
    throw ContractViolation("ranking head: all architecture dimensions must be positive");
  }
}

void check_params(const RankingHeadParams& p) {
  check_arch(p.arch);
  if (p.values.size() != Layout(p.arch).total) throw ContractViolation("ranking head: parameter count mismatch");
}

// Gathers the k x k x C input patch at (y, x) in (ky, kx, c) order.
void gather_patch(const FeatureMap& in, int y, int x, int k, std::vector<double>& patch) {
  std::size_t n = 0;
  const std::size_t row = static_cast<std::size_t>(k) * in.channels;
  for (int ky = 0; ky < k; ++ky) {
    const float* src = &in.values[in.index(y + ky, x, 0)];
    for (std::size_t i = 0; i < row; ++i) patch[n++] = src[i];
  }
}

void check_input(const HeadArchitecture& a, const FeatureMap& in) {
  if (in.channels != a.in_channels) throw ContractViolation("ranking head: input channel count mismatch");
  if (in.height < a.kernel || in.width < a.kernel) throw ContractViolation("ranking head: input smaller than kernel");
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::size_t HeadArchitecture::parameter_count() const noexcept { return Layout(*this).total; }

std::uint64_t HeadArchitecture::digest() const noexcept {
  std::ostringstream ss;
  ss << "conv" << kernel << "x" << kernel << ":" << in_channels << "->" << conv_channels << "/relu/avgpool/concat"
     << frames << "/dense" << hidden << "/relu/dense1";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : ss.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RankingHeadParams RankingHeadParams::zeros(const HeadArchitecture& arch) {
  check_arch(arch);
  return {arch, std::vector<double>(Layout(arch).total, 0.0)};
}

RankingHeadParams RankingHeadParams::random(const HeadArchitecture& arch, std::uint64_t seed) {
  RankingHeadParams p = zeros(arch);
  const Layout L(arch);
  Rng rng(seed);
  const double conv_std = std::sqrt(2.0 / static_cast<double>(L.patch));
  const double w1_std = std::sqrt(2.0 / static_cast<double>(L.concat));
  const double w2_std = std::sqrt(1.0 / arch.hidden);
  for (std::size_t i = L.conv_w; i < L.conv_b; ++i) p.values[i] = conv_std * rng.normal();
  for (std::size_t i = L.w1; i < L.b1; ++i) p.values[i] = w1_std * rng.normal();
  for (std::size_t i = L.w2; i < L.b2; ++i) p.values[i] = w2_std * rng.normal();
  return p;
}

namespace {

constexpr char kHeadMagic[4] = {'V', 'A', 'H', 'P'};
constexpr std::uint32_t kHeadVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& name) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError(name + ": truncated head parameter file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_head_params(const std::filesystem::path& path, const RankingHeadParams& params) {
  check_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& a = params.arch;
  out.write(kHeadMagic, 4);
  put_le<std::uint32_t>(out, kHeadVersion);
  put_le<std::uint64_t>(out, a.digest());
  for (int d : {a.in_channels, a.conv_channels, a.kernel, a.frames, a.hidden}) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.values.size()));
  for (double v : params.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("write failed: " + path.string());
}

RankingHeadParams load_head_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string name = path.string();
  if (!in) throw IoError("cannot open " + name);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kHeadMagic, 4) != 0) throw IoError(name + ": not a head parameter file");
  if (get_le<std::uint32_t>(in, name) != kHeadVersion) throw IoError(name + ": unsupported head parameter version");
  const auto digest = get_le<std::uint64_t>(in, name);
  HeadArchitecture a;
  int* dims[] = {&a.in_channels, &a.conv_channels, &a.kernel, &a.frames, &a.hidden};
  for (int* d : dims) {
    const auto v = get_le<std::uint32_t>(in, name);
    if (v == 0 || v > 4096) throw IoError(name + ": invalid architecture dimension");
    *d = static_cast<int>(v);
  }
  if (digest != a.digest()) throw IoError(name + ": architecture digest mismatch");
  const auto count = get_le<std::uint32_t>(in, name);
  if (count != a.parameter_count()) throw IoError(name + ": parameter count mismatch");
  RankingHeadParams p{a, std::vector<double>(count)};
  for (double& v : p.values) {
    v = std::bit_cast<float>(get_le<std::uint32_t>(in, name));
    if (!std::isfinite(v)) throw IoError(name + ": non-finite parameter");
  }
  return p;
}

std::vector<double> pool_frame(const RankingHeadParams& params, const FeatureMap& input) {
  check_params(params);
  const auto& a = params.arch;
  check_input(a, input);
  const Layout L(a);
  const int oh = input.height - a.kernel + 1, ow = input.width - a.kernel + 1;
  std::vector<double> pooled(static_cast<std::size_t>(a.conv_channels), 0.0);
  std::vector<double> patch(L.patch);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      gather_patch(input, y, x, a.kernel, patch);
      for (int o = 0; o < a.conv_channels; ++o) {
        const double* w = &params.values[L.conv_w + static_cast<std::size_t>(o) * L.patch];
        double pre = params.values[L.conv_b + o];
        for (std::size_t i = 0; i < L.patch; ++i) pre += w[i] * patch[i];
        if (pre > 0.0) pooled[o] += pre;
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(oh) * ow);
  for (double& v : pooled) v *= inv;
  return pooled;
}

double head_logit(const RankingHeadParams& params, std::span<const std::vector<double>> pooled) {
  check_params(params);
  const auto& a = params.arch;
  if (static_cast<int>(pooled.size()) != a.frames) throw ContractViolation("ranking head: wrong number of frames");
  const Layout L(a);
  std::vector<double> h0;
  h0.reserve(L.concat);
  for (const auto& p : pooled) {
    if (static_cast<int>(p.size()) != a.conv_channels) throw ContractViolation("ranking head: pooled size mismatch");
    h0.insert(h0.end(), p.begin(), p.end());
  }
  double logit = params.values[L.b2];
  for (int h = 0; h < a.hidden; ++h) {
    const double* w = &params.values[L.w1 + static_cast<std::size_t>(h) * L.concat];
    double pre = params.values[L.b1 + h];
    for (std::size_t i = 0; i < L.concat; ++i) pre += w[i] * h0[i];
    if (pre > 0.0) logit += params.values[L.w2 + h] * pre;
  }
  return logit;
}

double squash(double logit) noexcept { return std::tanh(0.5 * logit); }

double sample_logit(const RankingHeadParams& params, const PairSample& sample) {
  std::vector<std::vector<double>> pooled;
  pooled.reserve(sample.frames.size());
  for (const auto& f : sample.frames) pooled.push_back(pool_frame(params, *f));
  return sample.sign * head_logit(params, pooled);
}

LossAndGrad bce_loss_and_grad(const RankingHeadParams& params, std::span<const PairSample> batch) {
  check_params(params);
  if (batch.empty()) throw ContractViolation("bce_loss_and_grad: empty batch");
  const auto& a = params.arch;
  const Layout L(a);
  const auto& P = params.values;
  LossAndGrad out;
  out.grad.assign(L.total, 0.0);
  auto& G = out.grad;

  // Frames shared between samples are convolved (and back-propagated) once.
  std::unordered_map<const FeatureMap*, std::size_t> slot;
  std::vector<const FeatureMap*> frames;
  for (const auto& s : batch) {
    if (static_cast<int>(s.frames.size()) != a.frames) throw ContractViolation("bce_loss_and_grad: wrong frame count");
    for (const auto& f : s.frames) {
      if (slot.emplace(f.get(), frames.size()).second) frames.push_back(f.get());
    }
  }
  std::vector<std::vector<double>> pooled(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) pooled[i] = pool_frame(params, *frames[i]);
  std::vector<std::vector<double>> d_pooled(frames.size(), std::vector<double>(a.conv_channels, 0.0));

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> h0(L.concat), pre1(a.hidden);
  for (const auto& s : batch) {
    for (int f = 0; f < a.frames; ++f) {
      const auto& p = pooled[slot.at(s.frames[f].get())];
      std::copy(p.begin(), p.end(), h0.begin() + static_cast<std::ptrdiff_t>(f) * a.conv_channels);
    }
    double logit = P[L.b2];
    for (int h = 0; h < a.hidden; ++h) {
      const double* w = &P[L.w1 + static_cast<std::size_t>(h) * L.concat];
      double pre = P[L.b1 + h];
      for (std::size_t i = 0; i < L.concat; ++i) pre += w[i] * h0[i];
      pre1[h] = pre;
      if (pre > 0.0) logit += P[L.w2 + h] * pre;
    }
    const double z = s.sign * logit;
    const double y = s.label ? 1.0 : 0.0;
    out.loss += (softplus(z) - y * z) * inv_b;
    const double d_logit = s.sign * (sigmoid(z) - y) * inv_b;
    G[L.b2] += d_logit;
    for (int h = 0; h < a.hidden; ++h) {
      if (!(pre1[h] > 0.0)) continue;
      G[L.w2 + h] += d_logit * pre1[h];
      const double d_pre = d_logit * P[L.w2 + h];
      G[L.b1 + h] += d_pre;
      double* gw = &G[L.w1 + static_cast<std::size_t>(h) * L.concat];
      const double* w = &P[L.w1 + static_cast<std::size_t>(h) * L.concat];
      for (std::size_t i = 0; i < L.concat; ++i) gw[i] += d_pre * h0[i];
      for (int f = 0; f < a.frames; ++f) {
        auto& dp = d_pooled[slot.at(s.frames[f].get())];
        for (int o = 0; o < a.conv_channels; ++o) dp[o] += d_pre * w[static_cast<std::size_t>(f) * a.conv_channels + o];
      }
    }
  }

  std::vector<double> patch(L.patch);
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    const FeatureMap& in = *frames[fi];
    const int oh = in.height - a.kernel + 1, ow = in.width - a.kernel + 1;
    const double inv_area = 1.0 / (static_cast<double>(oh) * ow);
    const auto& dp = d_pooled[fi];
    if (std::all_of(dp.begin(), dp.end(), [](double v) { return v == 0.0; })) continue;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        gather_patch(in, y, x, a.kernel, patch);
        for (int o = 0; o < a.conv_channels; ++o) {
          const double* w = &P[L.conv_w + static_cast<std::size_t>(o) * L.patch];
          double pre = P[L.conv_b + o];
          for (std::size_t i = 0; i < L.patch; ++i) pre += w[i] * patch[i];
          if (!(pre > 0.0)) continue;
          const double g = dp[o] * inv_area;
          G[L.conv_b + o] += g;
          double* gw = &G[L.conv_w + static_cast<std::size_t>(o) * L.patch];
          for (std::size_t i = 0; i < L.patch; ++i) gw[i] += g * patch[i];
        }
      }
    }
  }
  return out;
}

double bce_loss(const RankingHeadParams& params, std::span<const PairSample> batch) {
  if (batch.empty()) throw ContractViolation("bce_loss: empty batch");
  double loss = 0.0;
  for (const auto& s : batch) {
    const double z = sample_logit(params, s);
    loss += softplus(z) - (s.label ? z : 0.0);
  }
  return loss / static_cast<double>(batch.size());
}

namespace {

// Accuracy with pooled activations shared across samples.
double accuracy_cached(const RankingHeadParams& params, std::span<const PairSample> samples) {
  if (samples.empty()) return 0.0;
  std::unordered_map<const FeatureMap*, std::vector<double>> cache;
  int correct = 0;
  std::vector<std::vector<double>> stack;
  for (const auto& s : samples) {
    stack.clear();
    for (const auto& f : s.frames) {
      auto it = cache.find(f.get());
      if (it == cache.end()) it = cache.emplace(f.get(), pool_frame(params, *f)).first;
      stack.push_back(it->second);
    }
    const int predicted = s.sign * head_logit(params, stack) > 0.0 ? 1 : 0;
    if (predicted == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

double pair_accuracy(const RankingHeadParams& params, std::span<const PairSample> samples) {
  return accuracy_cached(params, samples);
}

TrainResult train_head(std::span<const PairSample> train, std::span<const PairSample> validation,
                       const RankingHeadParams& init, const TrainConfig& cfg,
                       const std::function<void(const EpochStats&)>& on_epoch) {
  check_params(init);
  if (train.empty()) throw ValidationError("pairs", "no training pairs");
  if (cfg.batch_size < 1) throw ValidationError("batch_size", "must be at least 1");
  if (cfg.epochs < 1) throw ValidationError("epochs", "must be at least 1");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.momentum >= 0.0) || cfg.momentum >= 1.0) {
    throw ValidationError("optimizer", "learning rate must be >= 0 and momentum in [0, 1)");
  }
  TrainResult result;
  result.params = init;
  RankingHeadParams params = init;
  std::vector<double> velocity(params.values.size(), 0.0);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = -1.0;
  long step = 0;
  std::vector<PairSample> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      ++step;
      const LossAndGrad lg = bce_loss_and_grad(params, batch);
      if (!std::isfinite(lg.loss)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step) + " (epoch " +
                                 std::to_string(epoch) + ")");
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * lg.grad[i];
        params.values[i] += velocity[i];
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    stats.train_accuracy = accuracy_cached(params, train);
    stats.validation_accuracy = validation.empty() ? stats.train_accuracy : accuracy_cached(params, validation);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stats.validation_accuracy > best) {
      best = stats.validation_accuracy;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace vidann
