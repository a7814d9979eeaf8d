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

// Toy problems for the finite-difference gradient oracle.

#ifndef TRACEWAVE_TESTS_BILSTM_TOY_HPP_
#define TRACEWAVE_TESTS_BILSTM_TOY_HPP_

#include <random>

#include "tracewave/localize.hpp"

namespace tracewave::testing {

struct GradientToy {
  localize::Bilstm net;
  localize::Matrix inputs;
  localize::Matrix targets;
  std::size_t batch = 2;
};

// f_input = 4, T = 3, batch 2. LeakyReLU is not differentiable at zero, so
// central differences are meaningless when a dense pre-activation lies
// within epsilon of the kink; such input draws are discarded and redrawn
// from the same stream.
inline GradientToy gradient_toy(std::uint64_t seed, double kink_margin = 5e-4) {
  GradientToy toy{localize::Bilstm(localize::BilstmShape::for_features(4), seed), {}, {}, 2};
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  toy.targets.resize(2, 6);
  for (Eigen::Index k = 0; k < toy.targets.size(); ++k) toy.targets.data()[k] = u(rng);
  toy.inputs.resize(4, 6);
  do {
    for (Eigen::Index k = 0; k < toy.inputs.size(); ++k) toy.inputs.data()[k] = u(rng);
  } while (toy.net.dense_preactivation(toy.inputs, toy.batch).cwiseAbs().minCoeff() < kink_margin);
  return toy;
}

}  // namespace tracewave::testing

#endif  // TRACEWAVE_TESTS_BILSTM_TOY_HPP_
