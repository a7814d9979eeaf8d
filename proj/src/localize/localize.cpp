// Copyright 2026 The Tracewave Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tracewave/localize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

namespace tracewave::localize {
namespace {

constexpr double kLeakySlope = 0.01;
constexpr char kMagic[4] = {'T', 'W', 'V', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Tensor slots in tensors_.
enum Slot : std::size_t {
  kL1FwdW, kL1FwdU, kL1FwdB,
  kL1BwdW, kL1BwdU, kL1BwdB,
  kL2FwdW, kL2FwdU, kL2FwdB,
  kL2BwdW, kL2BwdU, kL2BwdB,
  kDense1W, kDense1B,
  kDense2W, kDense2B,
  kSlotCount,
};

// Activations of one direction of one layer, one column per (t, b).
struct DirectionCache {
  Matrix gates;  // 4H: sigmoid(i), sigmoid(f), tanh(g), sigmoid(o)
  Matrix c;
  Matrix tanh_c;
  Matrix h;
};

struct LayerCache {
  DirectionCache fwd;
  DirectionCache bwd;
  Matrix out;  // [h_fwd; h_bwd]
};

struct ForwardCache {
  LayerCache l1;
  LayerCache l2;
  Matrix pre;   // dense1 pre-activation
  Matrix act;   // dense1 output
  Matrix y;     // head output
};

Matrix sigmoid(const Matrix& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

void run_direction(const Matrix& w, const Matrix& u, const Matrix& b,
                   const Matrix& x, std::size_t steps, std::size_t batch,
                   bool reverse, DirectionCache& cache) {
  const Eigen::Index h = u.cols();
  const auto bb = static_cast<Eigen::Index>(batch);
  Matrix z = w * x;
  z.colwise() += b.col(0);
  cache.gates.resize(4 * h, z.cols());
  cache.c.resize(h, z.cols());
  cache.tanh_c.resize(h, z.cols());
  cache.h.resize(h, z.cols());
  Matrix h_prev = Matrix::Zero(h, bb);
  Matrix c_prev = Matrix::Zero(h, bb);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * bb;
    Matrix zt = z.middleCols(col, bb);
    zt.noalias() += u * h_prev;
    auto gates = cache.gates.middleCols(col, bb);
    gates.topRows(2 * h) = sigmoid(zt.topRows(2 * h));
    gates.middleRows(2 * h, h) = zt.middleRows(2 * h, h).array().tanh().matrix();
    gates.bottomRows(h) = sigmoid(zt.bottomRows(h));
    const auto i = gates.topRows(h).array();
    const auto f = gates.middleRows(h, h).array();
    const auto g = gates.middleRows(2 * h, h).array();
    const auto o = gates.bottomRows(h).array();
    auto c = cache.c.middleCols(col, bb);
    c = (f * c_prev.array() + i * g).matrix();
    auto tc = cache.tanh_c.middleCols(col, bb);
    tc = c.array().tanh().matrix();
    auto ht = cache.h.middleCols(col, bb);
    ht = (o * tc.array()).matrix();
    h_prev = ht;
    c_prev = c;
  }
}

// Accumulates parameter gradients and dx for one direction given dL/dh.
void backprop_direction(const Matrix& w, const Matrix& u, const Matrix& x,
                        const DirectionCache& cache, const Matrix& dh_out,
                        std::size_t steps, std::size_t batch, bool reverse,
                        Matrix& dw, Matrix& du, Matrix& db, Matrix& dx) {
  const Eigen::Index h = u.cols();
  const auto bb = static_cast<Eigen::Index>(batch);
  Matrix dz_all(4 * h, dh_out.cols());
  Matrix dh_next = Matrix::Zero(h, bb);
  Matrix dc_next = Matrix::Zero(h, bb);
  Matrix dc(h, bb);
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * bb;
    const bool has_prev = s > 0;
    const Eigen::Index prev_col =
        has_prev ? static_cast<Eigen::Index>(reverse ? t + 1 : t - 1) * bb : 0;

    const auto gates = cache.gates.middleCols(col, bb);
    const auto i = gates.topRows(h).array();
    const auto f = gates.middleRows(h, h).array();
    const auto g = gates.middleRows(2 * h, h).array();
    const auto o = gates.bottomRows(h).array();
    const auto tc = cache.tanh_c.middleCols(col, bb).array();

    const Matrix dh = dh_out.middleCols(col, bb) + dh_next;
    dc = (dc_next.array() + dh.array() * o * (1.0 - tc.square())).matrix();

    auto dz = dz_all.middleCols(col, bb);
    dz.topRows(h) = (dc.array() * g * i * (1.0 - i)).matrix();
    if (has_prev) {
      dz.middleRows(h, h) =
          (dc.array() * cache.c.middleCols(prev_col, bb).array() * f * (1.0 - f)).matrix();
    } else {
      dz.middleRows(h, h).setZero();
    }
    dz.middleRows(2 * h, h) = (dc.array() * i * (1.0 - g.square())).matrix();
    dz.bottomRows(h) = (dh.array() * tc * o * (1.0 - o)).matrix();

    dh_next.noalias() = u.transpose() * dz;
    dc_next = (dc.array() * f).matrix();
    if (has_prev) du.noalias() += dz * cache.h.middleCols(prev_col, bb).transpose();
  }
  dw.noalias() += dz_all * x.transpose();
  db.col(0) += dz_all.rowwise().sum();
  dx.noalias() += w.transpose() * dz_all;
}

void forward_pass(const std::vector<Matrix>& p, const Matrix& x,
                  std::size_t batch, ForwardCache& cache) {
  if (batch == 0 || x.cols() % static_cast<Eigen::Index>(batch) != 0) {
    throw DimensionError("input columns are not a multiple of the batch size");
  }
  const std::size_t steps = static_cast<std::size_t>(x.cols()) / batch;
  const Eigen::Index h = p[kL1FwdU].cols();

  auto layer = [&](const Matrix& in, std::size_t base, LayerCache& lc) {
    run_direction(p[base], p[base + 1], p[base + 2], in, steps, batch, false, lc.fwd);
    run_direction(p[base + 3], p[base + 4], p[base + 5], in, steps, batch, true, lc.bwd);
    lc.out.resize(2 * h, in.cols());
    lc.out.topRows(h) = lc.fwd.h;
    lc.out.bottomRows(h) = lc.bwd.h;
  };
  layer(x, kL1FwdW, cache.l1);
  layer(cache.l1.out, kL2FwdW, cache.l2);

  cache.pre.noalias() = p[kDense1W] * cache.l2.out;
  cache.pre.colwise() += p[kDense1B].col(0);
  cache.act = cache.pre.array().max(kLeakySlope * cache.pre.array()).matrix();
  cache.y.noalias() = p[kDense2W] * cache.act;
  cache.y.colwise() += p[kDense2B].col(0);
}

double sample_normal(std::mt19937_64& rng, double sigma) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

// Little-endian primitives for the checkpoint container.
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
  if (!in.read(dst, static_cast<std::streamsize>(n))) {
    throw CheckpointError("truncated checkpoint");
  }
}

std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), static_cast<std::size_t>(bytes));
  std::uint64_t v = 0;
  for (int k = bytes; k-- > 0;) v = (v << 8) | b[k];
  return v;
}

std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_le(in, 4)); }
std::uint64_t get_u64(std::istream& in) { return get_le(in, 8); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

std::string get_str(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  if (n > (1u << 20)) throw CheckpointError("oversized string in checkpoint");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

}  // namespace

// ---------------------------------------------------------------- data

std::vector<TrajectoryPoint> build_survey_points(
    std::span<const capture::PacketRecord> records,
    const features::Deployment& deployment, std::int64_t burst_gap_ns) {
  features::SyncOptions sync;
  try {
    sync.wifi_tx_dbm = features::estimate_wifi_tx_power(records, "").p_wifi_tx_dbm;
  } catch (const features::NoEstimateError&) {
    // Deployment fallback applies.
  }
  std::map<std::int64_t, Vec2> truth;
  for (const auto& r : records) {
    if (r.truth_pos_m) truth.emplace(features::round_to_grid(r.timestamp_ns), *r.truth_pos_m);
  }
  const auto frames = features::synchronize(records, deployment, sync);
  std::vector<TrajectoryPoint> out;
  for (auto& frame : features::group_bursts(frames, burst_gap_ns)) {
    auto it = truth.find(frame.t_ns);
    if (it == truth.end()) continue;
    out.push_back({frame.t_ns, it->second, std::move(frame)});
  }
  return out;
}

std::vector<Trajectory> generate_trajectories(
    std::span<const TrajectoryPoint> survey, const GenerationOptions& options) {
  if (survey.empty()) throw Error("survey is empty");
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, survey.size() - 1);
  std::vector<Trajectory> out;
  out.reserve(options.count);
  for (std::size_t n = 0; n < options.count; ++n) {
    Trajectory traj;
    std::size_t current = pick(rng);
    traj.points.push_back(survey[current]);
    while (traj.points.size() < options.length) {
      std::size_t rejections = 0;
      for (;;) {
        const std::size_t candidate = pick(rng);
        const double k = std::abs(sample_normal(rng, options.step_sigma_m));
        if (candidate != current &&
            distance(survey[candidate].pos_m, survey[current].pos_m) < k) {
          traj.step_thresholds.push_back(k);
          current = candidate;
          break;
        }
        if (++rejections >= options.max_rejections) {
          throw GenerationStallError(fmt::format(
              "no step accepted after {} candidates", rejections));
        }
      }
      traj.points.push_back(survey[current]);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

Vector normalize_frame(const features::Deployment& deployment,
                       const features::FeatureFrame& frame) {
  using features::FeatureKind;
  if (frame.values.size() != deployment.size()) {
    throw DimensionError(fmt::format("frame has {} entries, deployment {}",
                                     frame.values.size(), deployment.size()));
  }
  Vector v(static_cast<Eigen::Index>(deployment.size()));
  for (std::size_t c = 0; c < deployment.size(); ++c) {
    const double x = frame.values[c];
    double y = 0.0;
    switch (deployment.columns[c].kind) {
      case FeatureKind::kTof: y = x / features::kPaddingTofNs; break;
      case FeatureKind::kSqi: y = (x - features::kPaddingDbm) / 201.0; break;
      default: y = (x - features::kPaddingDbm) / -features::kPaddingDbm; break;
    }
    v[static_cast<Eigen::Index>(c)] = y;
  }
  return v;
}

// ---------------------------------------------------------------- network

Bilstm::Bilstm(BilstmShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape.f_input == 0 || shape.hidden == 0 || shape.dense == 0) {
    throw DimensionError("network widths must be positive");
  }
  const auto f = static_cast<Eigen::Index>(shape.f_input);
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto d = static_cast<Eigen::Index>(shape.dense);
  tensors_.resize(kSlotCount);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    const Eigen::Index in = layer == 0 ? f : 2 * h;
    for (std::size_t dir = 0; dir < 2; ++dir) {
      const std::size_t base = layer * 6 + dir * 3;
      tensors_[base] = Matrix(4 * h, in);
      tensors_[base + 1] = Matrix(4 * h, h);
      tensors_[base + 2] = Matrix(4 * h, 1);
    }
  }
  tensors_[kDense1W] = Matrix(d, 2 * h);
  tensors_[kDense1B] = Matrix(d, 1);
  tensors_[kDense2W] = Matrix(2, d);
  tensors_[kDense2B] = Matrix(2, 1);

  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    }
  };
  for (std::size_t s = 0; s < kDense1W; ++s) fill(tensors_[s], 1.0 / std::sqrt(double(h)));
  for (std::size_t b : {kL1FwdB, kL1BwdB, kL2FwdB, kL2BwdB}) {
    tensors_[b].middleRows(h, h).setOnes();
  }
  fill(tensors_[kDense1W], 1.0 / std::sqrt(double(2 * h)));
  fill(tensors_[kDense1B], 1.0 / std::sqrt(double(2 * h)));
  fill(tensors_[kDense2W], 1.0 / std::sqrt(double(d)));
  fill(tensors_[kDense2B], 1.0 / std::sqrt(double(d)));
}

const std::vector<std::string>& Bilstm::tensor_names() {
  static const std::vector<std::string> names = {
      "lstm1.fwd.W", "lstm1.fwd.U", "lstm1.fwd.b",
      "lstm1.bwd.W", "lstm1.bwd.U", "lstm1.bwd.b",
      "lstm2.fwd.W", "lstm2.fwd.U", "lstm2.fwd.b",
      "lstm2.bwd.W", "lstm2.bwd.U", "lstm2.bwd.b",
      "dense1.W", "dense1.b", "dense2.W", "dense2.b"};
  return names;
}

std::size_t Bilstm::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

void Bilstm::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

Matrix Bilstm::forward(const Matrix& inputs, std::size_t batch) const {
  if (inputs.rows() != static_cast<Eigen::Index>(shape_.f_input)) {
    throw DimensionError(fmt::format("input has {} features, model expects {}",
                                     inputs.rows(), shape_.f_input));
  }
  ForwardCache cache;
  forward_pass(tensors_, inputs, batch, cache);
  return cache.y;
}

Matrix Bilstm::dense_preactivation(const Matrix& inputs, std::size_t batch) const {
  if (inputs.rows() != static_cast<Eigen::Index>(shape_.f_input)) {
    throw DimensionError("input feature count mismatch");
  }
  ForwardCache cache;
  forward_pass(tensors_, inputs, batch, cache);
  return cache.pre;
}

double Bilstm::loss(const Matrix& inputs, const Matrix& targets,
                    std::size_t batch, std::vector<Matrix>* grads) const {
  if (inputs.rows() != static_cast<Eigen::Index>(shape_.f_input)) {
    throw DimensionError("input feature count mismatch");
  }
  if (targets.rows() != 2 || targets.cols() != inputs.cols()) {
    throw DimensionError("targets must be 2 x columns of inputs");
  }
  ForwardCache cache;
  forward_pass(tensors_, inputs, batch, cache);
  const Matrix diff = cache.y - targets;
  const double n = static_cast<double>(diff.size());
  const double value = diff.squaredNorm() / n;
  if (!grads) return value;

  const auto& p = tensors_;
  grads->resize(p.size());
  for (std::size_t s = 0; s < p.size(); ++s) (*grads)[s] = Matrix::Zero(p[s].rows(), p[s].cols());
  auto& g = *grads;
  const std::size_t steps = static_cast<std::size_t>(inputs.cols()) / batch;
  const Eigen::Index h = p[kL1FwdU].cols();

  const Matrix dy = (2.0 / n) * diff;
  g[kDense2W].noalias() = dy * cache.act.transpose();
  g[kDense2B].col(0) = dy.rowwise().sum();
  Matrix dpre = p[kDense2W].transpose() * dy;
  dpre.array() *= (cache.pre.array() > 0.0).select(1.0, Matrix::Constant(dpre.rows(), dpre.cols(), kLeakySlope).array());
  g[kDense1W].noalias() = dpre * cache.l2.out.transpose();
  g[kDense1B].col(0) = dpre.rowwise().sum();
  const Matrix dl2 = p[kDense1W].transpose() * dpre;

  Matrix dl1 = Matrix::Zero(2 * h, inputs.cols());
  backprop_direction(p[kL2FwdW], p[kL2FwdU], cache.l1.out, cache.l2.fwd, dl2.topRows(h),
                     steps, batch, false, g[kL2FwdW], g[kL2FwdU], g[kL2FwdB], dl1);
  backprop_direction(p[kL2BwdW], p[kL2BwdU], cache.l1.out, cache.l2.bwd, dl2.bottomRows(h),
                     steps, batch, true, g[kL2BwdW], g[kL2BwdU], g[kL2BwdB], dl1);
  Matrix dx = Matrix::Zero(inputs.rows(), inputs.cols());
  backprop_direction(p[kL1FwdW], p[kL1FwdU], inputs, cache.l1.fwd, dl1.topRows(h),
                     steps, batch, false, g[kL1FwdW], g[kL1FwdU], g[kL1FwdB], dx);
  backprop_direction(p[kL1BwdW], p[kL1BwdU], inputs, cache.l1.bwd, dl1.bottomRows(h),
                     steps, batch, true, g[kL1BwdW], g[kL1BwdU], g[kL1BwdB], dx);
  return value;
}

std::vector<Vec2> Bilstm::forward_sequence(std::span<const Vector> frames) const {
  Matrix x(static_cast<Eigen::Index>(shape_.f_input), static_cast<Eigen::Index>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].size() != x.rows()) {
      throw DimensionError(fmt::format("frame {} has {} features, model expects {}",
                                       t, frames[t].size(), x.rows()));
    }
    x.col(static_cast<Eigen::Index>(t)) = frames[t];
  }
  std::vector<Vec2> out;
  if (frames.empty()) return out;
  const Matrix y = forward(x, 1);
  for (Eigen::Index t = 0; t < y.cols(); ++t) out.push_back({y(0, t), y(1, t)});
  return out;
}

std::vector<double> gradient_check(const Bilstm& model, const Matrix& inputs,
                                   const Matrix& targets, std::size_t batch,
                                   double epsilon) {
  std::vector<Matrix> analytic;
  model.loss(inputs, targets, batch, &analytic);
  Bilstm probe = model;
  std::vector<double> errors;
  for (std::size_t s = 0; s < analytic.size(); ++s) {
    Matrix& t = probe.tensors()[s];
    Matrix numeric(t.rows(), t.cols());
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const double saved = t.data()[k];
      t.data()[k] = saved + epsilon;
      const double up = probe.loss(inputs, targets, batch, nullptr);
      t.data()[k] = saved - epsilon;
      const double down = probe.loss(inputs, targets, batch, nullptr);
      t.data()[k] = saved;
      numeric.data()[k] = (up - down) / (2.0 * epsilon);
    }
    const double scale = std::max({analytic[s].cwiseAbs().maxCoeff(),
                                   numeric.cwiseAbs().maxCoeff(), 1e-12});
    errors.push_back((analytic[s] - numeric).cwiseAbs().maxCoeff() / scale);
  }
  return errors;
}

// ---------------------------------------------------------------- localizer

OutputScaler OutputScaler::fit(std::span<const Vec2> positions) {
  OutputScaler s;
  if (positions.empty()) return s;
  double mx = 0, my = 0;
  for (const Vec2& p : positions) {
    mx += p.x;
    my += p.y;
  }
  mx /= positions.size();
  my /= positions.size();
  double vx = 0, vy = 0;
  for (const Vec2& p : positions) {
    vx += (p.x - mx) * (p.x - mx);
    vy += (p.y - my) * (p.y - my);
  }
  const double sx = std::sqrt(vx / positions.size());
  const double sy = std::sqrt(vy / positions.size());
  s.offset = {mx, my};
  s.scale = {sx > 1e-9 ? sx : 1.0, sy > 1e-9 ? sy : 1.0};
  return s;
}

std::vector<Vec2> Localizer::predict(std::span<const features::FeatureFrame> frames,
                                     std::size_t window) const {
  if (window == 0) throw Error("window must be positive");
  std::vector<Vector> x;
  x.reserve(frames.size());
  for (const auto& f : frames) x.push_back(normalize_frame(deployment, f));
  std::vector<Vec2> out;
  out.reserve(frames.size());
  for (std::size_t begin = 0; begin < x.size(); begin += window) {
    const std::size_t end = std::min(x.size(), begin + window);
    for (Vec2 p : net.forward_sequence(std::span(x).subspan(begin, end - begin))) {
      out.push_back(scaler.to_world(p));
    }
  }
  return out;
}

Localizer make_localizer(const features::Deployment& deployment,
                         std::span<const TrajectoryPoint> survey,
                         std::uint64_t seed) {
  std::vector<Vec2> positions;
  for (const auto& p : survey) positions.push_back(p.pos_m);
  return {deployment, OutputScaler::fit(positions),
          Bilstm(BilstmShape::for_features(deployment.size()), seed)};
}

TrainReport train(Localizer& model, std::span<const Trajectory> trajectories,
                  const TrainOptions& options) {
  if (trajectories.empty()) throw Error("no training trajectories");
  if (options.batch == 0) throw Error("batch size must be positive");
  const std::size_t steps = trajectories.front().points.size();
  const auto f = static_cast<Eigen::Index>(model.net.f_input());
  if (model.deployment.size() != model.net.f_input()) {
    throw DimensionError("deployment width differs from network input");
  }

  std::vector<Matrix> xs, ys;
  xs.reserve(trajectories.size());
  ys.reserve(trajectories.size());
  for (const auto& traj : trajectories) {
    if (traj.points.size() != steps || steps == 0) {
      throw DimensionError("training trajectories must share one positive length");
    }
    Matrix x(f, static_cast<Eigen::Index>(steps));
    Matrix y(2, static_cast<Eigen::Index>(steps));
    for (std::size_t t = 0; t < steps; ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      x.col(col) = normalize_frame(model.deployment, traj.points[t].frame);
      const Vec2 p = model.scaler.to_model(traj.points[t].pos_m);
      y(0, col) = p.x;
      y(1, col) = p.y;
    }
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }

  std::vector<features::FeatureFrame> val_frames;
  std::vector<Vec2> val_truth;
  for (const auto& p : options.validation) {
    val_frames.push_back(p.frame);
    val_truth.push_back(p.pos_m);
  }

  auto params = model.net.tensors();
  std::vector<Matrix> m, v, grads;
  for (const auto& t : params) {
    m.push_back(Matrix::Zero(t.rows(), t.cols()));
    v.push_back(Matrix::Zero(t.rows(), t.cols()));
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(trajectories.size());
  std::iota(order.begin(), order.end(), 0);
  TrainReport report;
  std::vector<Matrix> best;
  double best_rmse = std::numeric_limits<double>::infinity();
  std::size_t adam_t = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch) {
      const std::size_t bsz = std::min(options.batch, order.size() - begin);
      const auto b = static_cast<Eigen::Index>(bsz);
      Matrix x(f, static_cast<Eigen::Index>(steps) * b);
      Matrix y(2, static_cast<Eigen::Index>(steps) * b);
      for (std::size_t k = 0; k < bsz; ++k) {
        const std::size_t j = order[begin + k];
        for (std::size_t t = 0; t < steps; ++t) {
          const Eigen::Index col = static_cast<Eigen::Index>(t) * b + static_cast<Eigen::Index>(k);
          x.col(col) = xs[j].col(static_cast<Eigen::Index>(t));
          y.col(col) = ys[j].col(static_cast<Eigen::Index>(t));
        }
      }
      const double loss = model.net.loss(x, y, bsz, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDivergedError(epoch, fmt::format("loss diverged in epoch {}", epoch));
      }
      epoch_loss += loss * static_cast<double>(bsz);

      ++adam_t;
      const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(adam_t));
      const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(adam_t));
      for (std::size_t s = 0; s < params.size(); ++s) {
        m[s] = options.beta1 * m[s] + (1.0 - options.beta1) * grads[s];
        v[s] = options.beta2 * v[s] + (1.0 - options.beta2) * grads[s].cwiseAbs2();
        params[s].array() -= options.lr * (m[s].array() / c1) /
                             ((v[s].array() / c2).sqrt() + options.adam_eps);
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    report.loss_curve.push_back(epoch_loss);

    std::optional<double> val_rmse;
    if (!val_frames.empty()) {
      val_rmse = evaluate(model.predict(val_frames), val_truth).rmse_m;
      report.validation_rmse.push_back(*val_rmse);
      if (*val_rmse < best_rmse) {
        best_rmse = *val_rmse;
        report.best_epoch = epoch;
        best.assign(params.begin(), params.end());
      }
    } else {
      report.best_epoch = epoch;
    }
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss, val_rmse);
  }
  if (!best.empty()) std::copy(best.begin(), best.end(), params.begin());
  return report;
}

// ---------------------------------------------------------------- baseline

std::vector<Vec2> knn_predict(std::span<const TrajectoryPoint> survey,
                              std::span<const features::FeatureFrame> frames,
                              std::size_t k,
                              const features::Deployment& deployment) {
  if (survey.empty()) throw Error("survey is empty");
  if (k == 0) throw Error("k must be positive");
  const std::size_t width = deployment.size();
  const std::size_t kk = std::min(k, survey.size());
  std::vector<Vector> keys;
  keys.reserve(survey.size());
  for (const auto& p : survey) keys.push_back(normalize_frame(deployment, p.frame));

  std::vector<Vec2> out;
  out.reserve(frames.size());
  std::vector<std::pair<double, std::size_t>> scored(survey.size());
  for (const auto& frame : frames) {
    const Vector q = normalize_frame(deployment, frame);
    for (std::size_t s = 0; s < survey.size(); ++s) {
      double sum = 0.0;
      std::size_t common = 0;
      for (std::size_t c = 0; c < width; ++c) {
        if (!frame.mask[c] || !survey[s].frame.mask[c]) continue;
        const double d = q[static_cast<Eigen::Index>(c)] - keys[s][static_cast<Eigen::Index>(c)];
        sum += d * d;
        ++common;
      }
      const double dist = common == 0 ? std::numeric_limits<double>::infinity()
                                      : std::sqrt(sum * static_cast<double>(width) / common);
      scored[s] = {dist, s};
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(kk),
                      scored.end());
    Vec2 mean;
    for (std::size_t j = 0; j < kk; ++j) mean = mean + survey[scored[j].second].pos_m;
    out.push_back((1.0 / static_cast<double>(kk)) * mean);
  }
  return out;
}

LocalizationMetrics evaluate(std::span<const Vec2> predicted,
                             std::span<const Vec2> truth) {
  if (predicted.size() != truth.size()) {
    throw DimensionError(fmt::format("{} predictions for {} truth points",
                                     predicted.size(), truth.size()));
  }
  LocalizationMetrics m;
  if (truth.empty()) return m;
  double sq = 0.0, abs = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = distance(predicted[i], truth[i]);
    m.errors_m.push_back(e);
    sq += e * e;
    abs += e;
  }
  m.rmse_m = std::sqrt(sq / truth.size());
  m.mae_m = abs / truth.size();
  return m;
}

// ---------------------------------------------------------------- storage

void save_checkpoint(std::ostream& out, const Localizer& model) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const auto names = model.deployment.manifest();
  put_u32(out, static_cast<std::uint32_t>(names.size()));
  for (const auto& n : names) put_str(out, n);
  put_f64(out, model.deployment.fallback_wifi_tx_dbm);
  put_f64(out, model.scaler.offset.x);
  put_f64(out, model.scaler.offset.y);
  put_f64(out, model.scaler.scale.x);
  put_f64(out, model.scaler.scale.y);
  const BilstmShape& s = model.net.shape();
  put_u64(out, s.f_input);
  put_u64(out, s.hidden);
  put_u64(out, s.dense);
  const auto tensors = model.net.tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    put_str(out, Bilstm::tensor_names()[k]);
    put_u32(out, 2);
    put_u64(out, static_cast<std::uint64_t>(tensors[k].rows()));
    put_u64(out, static_cast<std::uint64_t>(tensors[k].cols()));
    for (Eigen::Index r = 0; r < tensors[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < tensors[k].cols(); ++c) put_f64(out, tensors[k](r, c));
    }
  }
  if (!out) throw CheckpointError("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Localizer& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  save_checkpoint(out, model);
}

Localizer load_checkpoint(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw CheckpointError("not a TWV1 checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("unsupported checkpoint version {}", version));
  }
  std::vector<std::string> names(get_u32(in));
  for (auto& n : names) n = get_str(in);
  Localizer model;
  model.deployment = features::Deployment::from_manifest(names);
  model.deployment.fallback_wifi_tx_dbm = get_f64(in);
  model.scaler.offset = {get_f64(in), get_f64(in)};
  model.scaler.scale = {get_f64(in), get_f64(in)};
  BilstmShape shape;
  shape.f_input = get_u64(in);
  shape.hidden = get_u64(in);
  shape.dense = get_u64(in);
  if (shape.f_input != names.size()) throw CheckpointError("manifest width differs from network");
  if (shape.hidden > 100'000 || shape.dense > 100'000) throw CheckpointError("implausible network shape");
  model.net = Bilstm(shape, 0);
  auto tensors = model.net.tensors();
  if (get_u32(in) != tensors.size()) throw CheckpointError("tensor count mismatch");
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    if (get_str(in) != Bilstm::tensor_names()[k]) throw CheckpointError("tensor name mismatch");
    if (get_u32(in) != 2) throw CheckpointError("tensor rank mismatch");
    const std::uint64_t rows = get_u64(in);
    const std::uint64_t cols = get_u64(in);
    if (rows != static_cast<std::uint64_t>(tensors[k].rows()) ||
        cols != static_cast<std::uint64_t>(tensors[k].cols())) {
      throw CheckpointError("tensor shape mismatch for " + Bilstm::tensor_names()[k]);
    }
    for (Eigen::Index r = 0; r < tensors[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < tensors[k].cols(); ++c) tensors[k](r, c) = get_f64(in);
    }
  }
  return model;
}

Localizer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return load_checkpoint(in);
}

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows) {
  out << "location,method,aps,rmse_m,mae_m,train_s,test_us\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{:.3f},{:.3f},{:.3f},{:.1f}\n", r.location, r.method,
                       r.aps, r.rmse_m, r.mae_m, r.train_s, r.test_us);
  }
}

}  // namespace tracewave::localize
