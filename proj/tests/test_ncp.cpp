#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "latent_steer/error.hpp"
#include "latent_steer/ncp.hpp"
#include "latent_steer/rng.hpp"

using namespace latent_steer;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LtcParams unit_params(const WiringSpec& w) {
  const auto n = static_cast<std::size_t>(w.neurons());
  const auto s = w.synapses.size();
  LtcParams p;
  p.tau.assign(n, 1.0);
  p.v_leak.assign(n, 0.0);
  p.weight.assign(s, 1.0);
  p.gate_slope.assign(s, 1.0);
  p.gate_mid.assign(s, 0.0);
  p.readout_weight.assign(w.motor, 1.0);
  return p;
}

LtcParams random_params(const WiringSpec& w, Rng& rng) {
  auto p = unit_params(w);
  for (auto& v : p.tau) v = rng.uniform(0.5, 2.0);
  for (auto& v : p.v_leak) v = rng.uniform(-0.5, 0.5);
  for (auto& v : p.weight) v = rng.uniform(0.1, 1.5);
  for (auto& v : p.gate_slope) v = rng.uniform(0.5, 3.0);
  for (auto& v : p.gate_mid) v = rng.uniform(-0.5, 0.5);
  for (auto& v : p.readout_weight) v = rng.uniform(-1.0, 1.0);
  p.readout_bias = rng.uniform(-0.2, 0.2);
  return p;
}

int polarity_of(const WiringSpec& w, SynapseBank bank) {
  for (const auto& s : w.synapses)
    if (s.bank == bank) return s.polarity;
  return 0;
}

}  // namespace

TEST_CASE("dense wiring keeps every candidate synapse") {
  const auto w = build_wiring(4, 12, 6, 1, 0.0, 7);
  // 4*12 sensory + 12*6 inter + 6*5 recurrent + 6*1 motor.
  CHECK(w.synapses.size() == 156);
  int counts[4] = {0, 0, 0, 0};
  for (const auto& s : w.synapses) ++counts[static_cast<int>(s.bank)];
  CHECK(counts[0] == 48);
  CHECK(counts[1] == 72);
  CHECK(counts[2] == 30);
  CHECK(counts[3] == 6);
}

TEST_CASE("sparse wiring keeps its degree invariants over many seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto w = build_wiring(16, 12, 6, 1, 0.9, seed);
    CHECK_NOTHROW(w.validate());
    const int n = w.neurons();
    std::vector<int> in(n, 0), out(n, 0), sens(w.sensory, 0);
    for (const auto& s : w.synapses) {
      ++in[s.post];
      if (s.bank == SynapseBank::kSensoryInter)
        ++sens[s.pre];
      else
        ++out[s.pre];
      CHECK((s.polarity == 1 || s.polarity == -1));
    }
    for (int i = 0; i < n; ++i) CHECK(in[i] > 0);
    for (int i = 0; i < w.first_motor(); ++i) CHECK(out[i] > 0);
    for (int i = 0; i < w.sensory; ++i) CHECK(sens[i] > 0);
  }
}

TEST_CASE("wiring is deterministic in its seed") {
  CHECK(build_wiring(8, 6, 4, 1, 0.6, 11) == build_wiring(8, 6, 4, 1, 0.6, 11));
  CHECK_FALSE(build_wiring(8, 6, 4, 1, 0.6, 11) == build_wiring(8, 6, 4, 1, 0.6, 12));
}

TEST_CASE("wiring rejects bad configurations") {
  CHECK_THROWS_AS(build_wiring(4, 12, 6, 1, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(build_wiring(4, 12, 6, 1, -0.1, 0), ConfigError);
  CHECK_THROWS_AS(build_wiring(4, 0, 6, 1, 0.5, 0), ConfigError);
  auto w = build_wiring(2, 2, 2, 1, 0.0, 0);
  w.synapses.back().polarity = 0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("ltc step on a chain by hand") {
  // sensory -> inter -> command -> motor with unit parameters and dt = 1.
  const auto w = build_wiring(1, 1, 1, 1, 0.0, 3);
  REQUIRE(w.synapses.size() == 3);
  const double a0 = polarity_of(w, SynapseBank::kSensoryInter);
  const double a1 = polarity_of(w, SynapseBank::kInterCommand);
  const double a2 = polarity_of(w, SynapseBank::kCommandMotor);
  const auto p = unit_params(w);
  const std::vector<double> input{0.0};
  const auto next = ltc_step(HiddenState(3, 0.0), input, p, w, 1.0);

  // new = (old + dt*(v_leak/tau + sum q*A)) / (1 + dt*(1/tau + sum q)), q = w*sigmoid(slope*(x - mid)).
  const double x0 = 0.5 * a0 / 2.5;
  const double f1 = sigmoid(x0);
  const double x1 = f1 * a1 / (2.0 + f1);
  const double f2 = sigmoid(x1);
  const double x2 = f2 * a2 / (2.0 + f2);
  CHECK(next[0] == doctest::Approx(x0).epsilon(1e-15));
  CHECK(next[1] == doctest::Approx(x1).epsilon(1e-15));
  CHECK(next[2] == doctest::Approx(x2).epsilon(1e-15));
  CHECK(ltc_readout(next, p, w) == doctest::Approx(std::tanh(x2 + 0.0)).epsilon(1e-15));
}

TEST_CASE("ltc step with no synaptic drive relaxes toward the leak") {
  const auto w = build_wiring(1, 1, 1, 1, 0.0, 3);
  auto p = unit_params(w);
  std::fill(p.weight.begin(), p.weight.end(), 0.0);
  p.v_leak = {0.4, -0.2, 0.8};
  p.tau = {2.0, 1.0, 0.5};
  const HiddenState s{1.0, 1.0, 1.0};
  const std::vector<double> input{3.0};
  const double dt = 0.5;
  const auto next = ltc_step(s, input, p, w, dt);
  for (int i = 0; i < 3; ++i) {
    const double expected = (s[i] + dt * p.v_leak[i] / p.tau[i]) / (1.0 + dt / p.tau[i]);
    CHECK(next[i] == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("recurrent command synapses read the previous state") {
  const auto w = build_wiring(1, 1, 2, 1, 0.0, 5);
  auto p = unit_params(w);
  // Silence every synapse except the command -> command pair.
  for (std::size_t k = 0; k < w.synapses.size(); ++k)
    if (w.synapses[k].bank != SynapseBank::kCommandCommand) p.weight[k] = 0.0;
  const HiddenState s{0.0, 0.3, -0.6, 0.0};
  const std::vector<double> input{0.0};
  const auto next = ltc_step(s, input, p, w, 1.0);
  for (const auto& syn : w.synapses) {
    if (syn.bank != SynapseBank::kCommandCommand) continue;
    const double f = sigmoid(s[syn.pre]);
    const double expected = (s[syn.post] + f * syn.polarity) / (2.0 + f);
    CHECK(next[syn.post] == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("ltc state stays inside the hull of start, leak and reversal potentials") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = build_wiring(5, 4, 3, 1, 0.5, trial);
    const auto p = random_params(w, rng);
    HiddenState s(w.neurons());
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> in(5);
      for (auto& v : in) v = rng.normal() * 3.0;
      s = ltc_step(s, in, p, w, rng.uniform(0.1, 2.0));
      for (double v : s) CHECK(std::abs(v) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("ltc step rejects bad input") {
  const auto w = build_wiring(2, 2, 2, 1, 0.0, 0);
  auto p = unit_params(w);
  const std::vector<double> in{0.0, 0.0};
  CHECK_THROWS_AS(ltc_step(HiddenState(4, 0.0), in, p, w, 1.0), DimensionError);
  CHECK_THROWS_AS(ltc_step(HiddenState(5, 0.0), std::vector<double>{0.0}, p, w, 1.0), DimensionError);
  CHECK_THROWS_AS(ltc_step(HiddenState(5, 0.0), in, p, w, -1.0), ConfigError);
  CHECK_THROWS_AS(ltc_step(HiddenState(5, std::nan("")), in, p, w, 1.0), NumericError);
  p.reversal.assign(w.synapses.size(), 0.5);
  CHECK_THROWS_AS(ltc_step(HiddenState(5, 0.0), in, p, w, 1.0), ConfigError);
  p.reversal.clear();
  p.tau.pop_back();
  CHECK_THROWS_AS(ltc_step(HiddenState(5, 0.0), in, p, w, 1.0), DimensionError);
}

TEST_CASE("value rollout and the flat-parameter net agree") {
  Rng rng(23);
  const auto w = build_wiring(3, 4, 3, 1, 0.4, 2);
  ParamLayout layout;
  const NcpNet net(w, layout);
  std::vector<double> flat(layout.total());
  for (auto& v : flat) v = rng.uniform(0.2, 1.2);
  const auto p = net.extract(std::span<const double>(flat));
  std::vector<std::vector<double>> seq(6, std::vector<double>(3));
  std::vector<double> inputs;
  for (auto& z : seq)
    for (auto& v : z) {
      v = rng.normal();
      inputs.push_back(v);
    }
  const auto y = rollout(seq, p, w, HiddenState(w.neurons(), 0.0), 0.7);
  NcpNet::RolloutTape<double> tape;
  net.rollout<double>(flat, inputs, 6, 0.7, tape);
  for (int t = 0; t < 6; ++t) CHECK(tape.yhat[t] == doctest::Approx(y[t]).epsilon(1e-14));
  CHECK_THROWS_AS(rollout(std::span<const std::vector<double>>{}, p, w, HiddenState(w.neurons(), 0.0)),
                  ConfigError);
}

TEST_CASE("rollout backward matches central differences") {
  Rng rng(31);
  const auto w = build_wiring(3, 4, 3, 2, 0.3, 8);
  ParamLayout layout;
  const NcpNet net(w, layout);
  std::vector<double> params(layout.total());
  for (auto& v : params) v = rng.uniform(0.3, 1.3);
  params[net.readout_bias_offset()] = 0.1;
  const int frames = 5;
  const double dt = 0.8;
  std::vector<double> inputs(frames * 3), dy(frames);
  for (auto& v : inputs) v = rng.normal();
  for (auto& v : dy) v = rng.normal();

  // Scalar objective: sum_t dy[t] * yhat[t].
  auto objective = [&](const std::vector<double>& p, const std::vector<double>& in) {
    NcpNet::RolloutTape<double> t;
    net.rollout<double>(p, in, frames, dt, t);
    double acc = 0;
    for (int i = 0; i < frames; ++i) acc += dy[i] * t.yhat[i];
    return acc;
  };

  NcpNet::RolloutTape<double> tape;
  net.rollout<double>(params, inputs, frames, dt, tape);
  std::vector<double> grad(params.size(), 0.0), d_in(inputs.size(), 0.0);
  net.rollout_backward<double>(params, tape, dy, dt, d_in, grad);

  const double h = 1e-6;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto plus = params, minus = params;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective(plus, inputs) - objective(minus, inputs)) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto plus = inputs, minus = inputs;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective(params, plus) - objective(params, minus)) / (2 * h);
    CHECK(d_in[i] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}
