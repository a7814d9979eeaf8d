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

// Sequence localization: random-walk trajectory synthesis over survey
// points, a two-layer bidirectional LSTM regressor with hand-written
// backpropagation, a masked k-NN baseline and error metrics.

#ifndef TRACEWAVE_LOCALIZE_HPP_
#define TRACEWAVE_LOCALIZE_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracewave/capture.hpp"
#include "tracewave/common.hpp"
#include "tracewave/features.hpp"

namespace tracewave::localize {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class GenerationStallError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(std::size_t epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct TrajectoryPoint {
  std::int64_t t_ns = 0;
  Vec2 pos_m;
  features::FeatureFrame frame;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  // |k| threshold of each accepted step, points.size() - 1 entries.
  std::vector<double> step_thresholds;
};

// One point per waypoint burst: synchronize, merge bursts closer than
// `burst_gap_ns`, and attach the simulator's truth position of the slot.
// Records must belong to one device.
std::vector<TrajectoryPoint> build_survey_points(
    std::span<const capture::PacketRecord> records,
    const features::Deployment& deployment,
    std::int64_t burst_gap_ns = 500'000'000);

struct GenerationOptions {
  std::size_t count = 20'000;
  std::size_t length = 20;
  double step_sigma_m = 1.0;
  std::uint64_t seed = 1;
  std::size_t max_rejections = 1'000'000;
};

// Random walks over survey points. From P_i a uniform candidate P_c (other
// than P_i) is accepted when |P_c - P_i| < |k|, k ~ N(0, sigma) redrawn per
// attempt.
std::vector<Trajectory> generate_trajectories(
    std::span<const TrajectoryPoint> survey, const GenerationOptions& options);

// Affine map of every column onto [0, 1]: dBm-valued kinds from [-101, 0],
// SQI from [-101, 100], ToF from [0, 200] ns.
Vector normalize_frame(const features::Deployment& deployment,
                       const features::FeatureFrame& frame);

struct BilstmShape {
  std::size_t f_input = 0;
  std::size_t hidden = 0;  // per direction
  std::size_t dense = 0;

  static BilstmShape for_features(std::size_t f_input) {
    return {f_input, 7 * f_input, 14 * f_input};
  }
  friend bool operator==(const BilstmShape&, const BilstmShape&) = default;
};

// Two bidirectional LSTM layers (gates i, f, g, o), a LeakyReLU(0.01) dense
// layer and a linear 2-unit head, applied per timestep.
//
// Batched tensors hold one column per (timestep, sequence) pair, column
// t * batch + b.
class Bilstm {
 public:
  Bilstm() = default;
  Bilstm(BilstmShape shape, std::uint64_t seed);

  const BilstmShape& shape() const { return shape_; }
  std::size_t f_input() const { return shape_.f_input; }

  std::span<Matrix> tensors() { return tensors_; }
  std::span<const Matrix> tensors() const { return tensors_; }
  static const std::vector<std::string>& tensor_names();
  std::size_t parameter_count() const;
  void set_zero();

  // inputs: f_input x (T * batch). Returns 2 x (T * batch).
  Matrix forward(const Matrix& inputs, std::size_t batch) const;

  // Mean squared error over all outputs; gradients are written into
  // `grads` (resized to match tensors()) when non-null.
  double loss(const Matrix& inputs, const Matrix& targets, std::size_t batch,
              std::vector<Matrix>* grads) const;

  // Dense-layer input before LeakyReLU, d x (T * batch).
  Matrix dense_preactivation(const Matrix& inputs, std::size_t batch) const;

  // One sequence, rows = timesteps.
  std::vector<Vec2> forward_sequence(std::span<const Vector> frames) const;

 private:
  BilstmShape shape_;
  std::vector<Matrix> tensors_;
};

// Relative error max|a - n| / max(max|a|, max|n|, 1e-12) per tensor between
// analytic and central-difference gradients.
std::vector<double> gradient_check(const Bilstm& model, const Matrix& inputs,
                                   const Matrix& targets, std::size_t batch,
                                   double epsilon = 1e-4);

struct OutputScaler {
  Vec2 offset;
  Vec2 scale{1.0, 1.0};

  Vec2 to_model(Vec2 p) const {
    return {(p.x - offset.x) / scale.x, (p.y - offset.y) / scale.y};
  }
  Vec2 to_world(Vec2 p) const {
    return {p.x * scale.x + offset.x, p.y * scale.y + offset.y};
  }
  // Mean and standard deviation of the positions (unit scale when flat).
  static OutputScaler fit(std::span<const Vec2> positions);
};

struct Localizer {
  features::Deployment deployment;
  OutputScaler scaler;
  Bilstm net;

  // Runs the network over consecutive windows of `window` frames.
  std::vector<Vec2> predict(std::span<const features::FeatureFrame> frames,
                            std::size_t window = 20) const;
};

struct TrainOptions {
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Keep the weights of the epoch with the lowest RMSE on this held-out
  // sequence, when given.
  std::span<const TrajectoryPoint> validation;
  std::function<void(std::size_t epoch, double loss, std::optional<double> val_rmse)>
      on_epoch;
};

struct TrainReport {
  std::vector<double> loss_curve;
  std::vector<double> validation_rmse;
  std::size_t best_epoch = 0;
};

// Minimizes MSE in scaled output space with Adam. Trajectories must share
// one length.
TrainReport train(Localizer& model, std::span<const Trajectory> trajectories,
                  const TrainOptions& options);

// Builds a localizer for the deployment with output scaling fitted to the
// survey positions.
Localizer make_localizer(const features::Deployment& deployment,
                         std::span<const TrajectoryPoint> survey,
                         std::uint64_t seed);

// Mean position of the k survey points nearest in normalized feature space;
// the distance covers entries measured in both frames and is rescaled by
// F / n_common. Ties go to the lower survey index.
std::vector<Vec2> knn_predict(std::span<const TrajectoryPoint> survey,
                              std::span<const features::FeatureFrame> frames,
                              std::size_t k,
                              const features::Deployment& deployment);

struct LocalizationMetrics {
  double rmse_m = 0.0;
  double mae_m = 0.0;
  std::vector<double> errors_m;
};

LocalizationMetrics evaluate(std::span<const Vec2> predicted,
                             std::span<const Vec2> truth);

// Binary container: "TWV1", u32 version, feature manifest, output scaler,
// network shape, then named little-endian f64 tensors (row-major).
void save_checkpoint(std::ostream& out, const Localizer& model);
void save_checkpoint(const std::filesystem::path& path, const Localizer& model);
Localizer load_checkpoint(std::istream& in);
Localizer load_checkpoint(const std::filesystem::path& path);

struct MetricsRow {
  std::string location;
  std::string method;
  std::size_t aps = 0;
  double rmse_m = 0.0;
  double mae_m = 0.0;
  double train_s = 0.0;
  double test_us = 0.0;
};

// CSV `location,method,aps,rmse_m,mae_m,train_s,test_us`.
void write_metrics(std::ostream& out, std::span<const MetricsRow> rows);

}  // namespace tracewave::localize

#endif  // TRACEWAVE_LOCALIZE_HPP_
