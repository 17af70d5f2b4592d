#include "latent_steer/ncp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "latent_steer/error.hpp"
#include "latent_steer/rng.hpp"

namespace latent_steer {

// ---------------------------------------------------------------------------
// Wiring

void WiringSpec::validate() const {
  if (sensory < 1 || inter < 1 || command < 1 || motor < 1) throw ConfigError("every NCP layer needs >= 1 neuron");
  const int n = neurons();
  std::vector<int> in_deg(n, 0), out_deg(n, 0), sensory_out(sensory, 0);
  for (const auto& s : synapses) {
    if (s.post < 0 || s.post >= n) throw ConfigError("synapse post index out of range");
    if (s.polarity != 1 && s.polarity != -1) throw ConfigError("synapse polarity must be +1 or -1");
    auto in_range = [](int v, int lo, int hi) { return v >= lo && v < hi; };
    bool ok = false;
    switch (s.bank) {
      case SynapseBank::kSensoryInter: ok = in_range(s.pre, 0, sensory) && in_range(s.post, 0, inter); break;
      case SynapseBank::kInterCommand:
        ok = in_range(s.pre, 0, inter) && in_range(s.post, first_command(), first_motor());
        break;
      case SynapseBank::kCommandCommand:
        ok = in_range(s.pre, first_command(), first_motor()) && in_range(s.post, first_command(), first_motor()) &&
             s.pre != s.post;
        break;
      case SynapseBank::kCommandMotor:
        ok = in_range(s.pre, first_command(), first_motor()) && in_range(s.post, first_motor(), n);
        break;
    }
    if (!ok) throw ConfigError("synapse violates its bank's layer structure");
    ++in_deg[s.post];
    if (s.bank == SynapseBank::kSensoryInter) {
      ++sensory_out[s.pre];
    } else {
      ++out_deg[s.pre];
    }
  }
  for (int i = 0; i < sensory; ++i)
    if (sensory_out[i] == 0) throw ConfigError("sensory input " + std::to_string(i) + " has no outbound synapse");
  for (int i = 0; i < n; ++i) {
    if (in_deg[i] == 0) throw ConfigError("neuron " + std::to_string(i) + " has no inbound synapse");
    if (i < first_motor() && out_deg[i] == 0) throw ConfigError("neuron " + std::to_string(i) + " has no outbound synapse");
  }
  for (std::size_t k = 1; k < synapses.size(); ++k) {
    const auto& a = synapses[k - 1];
    const auto& b = synapses[k];
    if (std::tie(a.post, a.bank, a.pre) >= std::tie(b.post, b.bank, b.pre)) {
      throw ConfigError("synapses must be sorted by (post, bank, pre) without duplicates");
    }
  }
}

WiringSpec build_wiring(int sensory, int inter, int command, int motor, double sparsity, std::uint64_t seed) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0,1)");
  if (sensory < 1 || inter < 1 || command < 1 || motor < 1) throw ConfigError("every NCP layer needs >= 1 neuron");

  WiringSpec w;
  w.sensory = sensory;
  w.inter = inter;
  w.command = command;
  w.motor = motor;
  w.sparsity = sparsity;
  w.seed = seed;

  Rng rng(seed);
  const double keep = 1.0 - sparsity;
  auto add = [&](int pre, int post, SynapseBank bank) {
    w.synapses.push_back({pre, post, rng.bernoulli(0.5) ? 1 : -1, bank});
  };
  auto consider = [&](int pre, int post, SynapseBank bank) {
    if (rng.bernoulli(keep)) add(pre, post, bank);
  };

  const int c0 = w.first_command(), m0 = w.first_motor();
  for (int s = 0; s < sensory; ++s)
    for (int i = 0; i < inter; ++i) consider(s, i, SynapseBank::kSensoryInter);
  for (int i = 0; i < inter; ++i)
    for (int c = c0; c < m0; ++c) consider(i, c, SynapseBank::kInterCommand);
  for (int a = c0; a < m0; ++a)
    for (int b = c0; b < m0; ++b)
      if (a != b) consider(a, b, SynapseBank::kCommandCommand);
  for (int c = c0; c < m0; ++c)
    for (int m = m0; m < m0 + motor; ++m) consider(c, m, SynapseBank::kCommandMotor);

  // Repair: inbound degree first, then outbound.
  const int n = w.neurons();
  auto in_degree = [&](int post) {
    return std::count_if(w.synapses.begin(), w.synapses.end(), [&](const Synapse& s) { return s.post == post; });
  };
  auto out_degree = [&](int pre, bool sensory_side) {
    return std::count_if(w.synapses.begin(), w.synapses.end(), [&](const Synapse& s) {
      return s.pre == pre && (s.bank == SynapseBank::kSensoryInter) == sensory_side;
    });
  };
  auto pick = [&](int lo, int count) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(count))); };

  for (int i = 0; i < n; ++i) {
    if (in_degree(i) > 0) continue;
    if (i < c0) {
      add(pick(0, sensory), i, SynapseBank::kSensoryInter);
    } else if (i < m0) {
      add(pick(0, inter), i, SynapseBank::kInterCommand);
    } else {
      add(pick(c0, command), i, SynapseBank::kCommandMotor);
    }
  }
  for (int s = 0; s < sensory; ++s)
    if (out_degree(s, true) == 0) add(s, pick(0, inter), SynapseBank::kSensoryInter);
  for (int i = 0; i < m0; ++i) {
    if (out_degree(i, false) > 0) continue;
    if (i < c0) {
      add(i, pick(c0, command), SynapseBank::kInterCommand);
    } else {
      add(i, pick(m0, motor), SynapseBank::kCommandMotor);
    }
  }

  std::sort(w.synapses.begin(), w.synapses.end(), [](const Synapse& a, const Synapse& b) {
    return std::tie(a.post, a.bank, a.pre) < std::tie(b.post, b.bank, b.pre);
  });
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Step kernel shared by the value API and the differentiable net

namespace {

template <typename T>
struct LtcView {
  const T* tau;
  const T* v_leak;
  const T* weight;
  const T* slope;
  const T* mid;
  const T* readout_w;
  T readout_b;
};

template <typename T>
T logistic(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// Writes new_state; den/pre/gate are optional tape outputs (may be null).
template <typename T>
void step_kernel(const WiringSpec& wiring, const LtcView<T>& p, const T* old_state, const T* input, T dt,
                 T* new_state, T* den_out, T* pre_out, T* gate_out) {
  const auto& syn = wiring.synapses;
  std::size_t k = 0;
  const int n = wiring.neurons();
  for (int i = 0; i < n; ++i) {
    T num = p.v_leak[i] / p.tau[i];
    T den = T{1} / p.tau[i];
    for (; k < syn.size() && syn[k].post == i; ++k) {
      const auto& s = syn[k];
      T x;
      switch (s.bank) {
        case SynapseBank::kSensoryInter: x = input[s.pre]; break;
        case SynapseBank::kCommandCommand: x = old_state[s.pre]; break;
        default: x = new_state[s.pre]; break;
      }
      const T f = logistic(p.slope[k] * (x - p.mid[k]));
      const T q = p.weight[k] * f;
      num += q * static_cast<T>(s.polarity);
      den += q;
      if (pre_out) pre_out[k] = x;
      if (gate_out) gate_out[k] = f;
    }
    const T d = T{1} + dt * den;
    new_state[i] = (old_state[i] + dt * num) / d;
    if (!std::isfinite(static_cast<double>(new_state[i]))) {
      throw NumericError("LTC state of neuron " + std::to_string(i) + " became non-finite");
    }
    if (den_out) den_out[i] = d;
  }
}

template <typename T>
T readout_kernel(const WiringSpec& wiring, const LtcView<T>& p, const T* state) {
  T acc = p.readout_b;
  for (int m = 0; m < wiring.motor; ++m) acc += p.readout_w[m] * state[wiring.first_motor() + m];
  return std::tanh(acc);
}

LtcView<double> view_of(const LtcParams& p) {
  return {p.tau.data(), p.v_leak.data(), p.weight.data(), p.gate_slope.data(), p.gate_mid.data(),
          p.readout_weight.data(), p.readout_bias};
}

void check_params(const LtcParams& p, const WiringSpec& wiring) {
  const auto n = static_cast<std::size_t>(wiring.neurons());
  const auto s = wiring.synapses.size();
  if (p.tau.size() != n || p.v_leak.size() != n || p.weight.size() != s || p.gate_slope.size() != s ||
      p.gate_mid.size() != s || p.readout_weight.size() != static_cast<std::size_t>(wiring.motor)) {
    throw DimensionError("LTC parameters do not match the wiring");
  }
  for (std::size_t k = 0; k < s; ++k) {
    if (p.reversal.size() == s && p.reversal[k] != wiring.synapses[k].polarity) {
      throw ConfigError("reversal potentials must equal synapse polarities");
    }
  }
}

}  // namespace

HiddenState ltc_step(const HiddenState& state, std::span<const double> input, const LtcParams& params,
                     const WiringSpec& wiring, double dt) {
  if (!(dt >= 0.0)) throw ConfigError("dt must be >= 0");
  check_params(params, wiring);
  if (state.size() != static_cast<std::size_t>(wiring.neurons())) throw DimensionError("hidden state size mismatch");
  if (input.size() != static_cast<std::size_t>(wiring.sensory)) throw DimensionError("NCP input size mismatch");
  for (double v : state)
    if (!std::isfinite(v)) throw NumericError("non-finite hidden state");
  HiddenState next(state.size());
  step_kernel<double>(wiring, view_of(params), state.data(), input.data(), dt, next.data(), nullptr, nullptr, nullptr);
  return next;
}

double ltc_readout(const HiddenState& state, const LtcParams& params, const WiringSpec& wiring) {
  return readout_kernel(wiring, view_of(params), state.data());
}

std::vector<double> rollout(std::span<const std::vector<double>> latent_seq, const LtcParams& params,
                            const WiringSpec& wiring, const HiddenState& init, double dt) {
  if (latent_seq.empty()) throw ConfigError("rollout needs a non-empty sequence");
  std::vector<double> out;
  out.reserve(latent_seq.size());
  HiddenState state = init;
  for (const auto& z : latent_seq) {
    state = ltc_step(state, z, params, wiring, dt);
    out.push_back(ltc_readout(state, params, wiring));
  }
  return out;
}

// ---------------------------------------------------------------------------
// NcpNet

NcpNet::NcpNet(const WiringSpec& wiring, ParamLayout& layout) : wiring_(wiring) {
  wiring_.validate();
  const int n = wiring_.neurons();
  const int s = static_cast<int>(wiring_.synapses.size());
  tau_ = layout.add("ncp.tau", {n});
  v_leak_ = layout.add("ncp.v_leak", {n});
  weight_ = layout.add("ncp.weight", {s});
  slope_ = layout.add("ncp.gate_slope", {s});
  mid_ = layout.add("ncp.gate_mid", {s});
  readout_w_ = layout.add("readout.weight", {wiring_.motor});
  readout_b_ = layout.add("readout.bias", {1});
}

namespace {

template <typename T>
LtcView<T> view_of(const NcpNet& net, std::span<const T> p) {
  return {p.data() + net.tau_offset(),       p.data() + net.v_leak_offset(),         p.data() + net.weight_offset(),
          p.data() + net.gate_slope_offset(), p.data() + net.gate_mid_offset(), p.data() + net.readout_weight_offset(),
          p[net.readout_bias_offset()]};
}

}  // namespace

template <typename T>
void NcpNet::step(std::span<const T> params, std::span<const T> state, std::span<const T> input, T dt,
                  StepTape<T>& tape) const {
  const auto n = static_cast<std::size_t>(neurons());
  const auto s = wiring_.synapses.size();
  if (input.size() != static_cast<std::size_t>(wiring_.sensory)) throw DimensionError("NCP input size mismatch");
  tape.old_state.assign(state.begin(), state.end());
  tape.new_state.resize(n);
  tape.den.resize(n);
  tape.pre.resize(s);
  tape.gate.resize(s);
  step_kernel<T>(wiring_, view_of(*this, params), tape.old_state.data(), input.data(), dt, tape.new_state.data(),
              tape.den.data(), tape.pre.data(), tape.gate.data());
}

template <typename T>
T NcpNet::readout(std::span<const T> params, std::span<const T> state) const {
  return readout_kernel(wiring_, view_of(*this, params), state.data());
}

template <typename T>
void NcpNet::rollout(std::span<const T> params, std::span<const T> inputs, int frames, T dt,
                     RolloutTape<T>& tape) const {
  const auto m = static_cast<std::size_t>(wiring_.sensory);
  if (frames < 1 || inputs.size() != m * frames) throw DimensionError("rollout input size mismatch");
  tape.steps.resize(frames);
  tape.yhat.resize(frames);
  std::vector<T> state(neurons(), T{0});
  for (int t = 0; t < frames; ++t) {
    step<T>(params, state, inputs.subspan(t * m, m), dt, tape.steps[t]);
    state = tape.steps[t].new_state;
    tape.yhat[t] = readout<T>(params, state);
  }
}

template <typename T>
void NcpNet::rollout_backward(std::span<const T> params, const RolloutTape<T>& tape, std::span<const T> d_yhat, T dt,
                              std::span<T> d_inputs, std::span<T> grad) const {
  const auto p = view_of(*this, params);
  const int n = neurons();
  const auto m = static_cast<std::size_t>(wiring_.sensory);
  const auto& syn = wiring_.synapses;
  const int frames = static_cast<int>(tape.steps.size());
  std::fill(d_inputs.begin(), d_inputs.end(), T{0});

  T* g_tau = grad.data() + tau_;
  T* g_v = grad.data() + v_leak_;
  T* g_w = grad.data() + weight_;
  T* g_slope = grad.data() + slope_;
  T* g_mid = grad.data() + mid_;
  T* g_ro_w = grad.data() + readout_w_;
  T* g_ro_b = grad.data() + readout_b_;

  std::vector<T> g_new(n, T{0}), g_old(n, T{0});
  for (int t = frames - 1; t >= 0; --t) {
    const auto& st = tape.steps[t];
    // g_new currently holds the gradient flowing back from step t+1.
    const T y = tape.yhat[t];
    const T d_act = d_yhat[t] * (T{1} - y * y);
    *g_ro_b += d_act;
    for (int k = 0; k < wiring_.motor; ++k) {
      const int idx = wiring_.first_motor() + k;
      g_ro_w[k] += d_act * st.new_state[idx];
      g_new[idx] += d_act * p.readout_w[k];
    }

    std::fill(g_old.begin(), g_old.end(), T{0});
    T* d_in = d_inputs.data() + t * m;
    std::size_t k = syn.size();
    for (int i = n - 1; i >= 0; --i) {
      const T g = g_new[i];
      const T den = st.den[i];
      const T x_new = st.new_state[i];
      const T tau = p.tau[i];
      g_old[i] += g / den;
      g_tau[i] += g * dt * (x_new - p.v_leak[i]) / (tau * tau * den);
      g_v[i] += g * dt / (tau * den);
      for (; k > 0 && syn[k - 1].post == i; --k) {
        const std::size_t j = k - 1;
        const auto& s = syn[j];
        const T f = st.gate[j];
        const T dq = g * dt * (static_cast<T>(s.polarity) - x_new) / den;
        g_w[j] += dq * f;
        const T df = dq * p.weight[j];
        const T fs = f * (T{1} - f);
        g_slope[j] += df * fs * (st.pre[j] - p.mid[j]);
        g_mid[j] -= df * fs * p.slope[j];
        const T d_pre = df * fs * p.slope[j];
        switch (s.bank) {
          case SynapseBank::kSensoryInter: d_in[s.pre] += d_pre; break;
          case SynapseBank::kCommandCommand: g_old[s.pre] += d_pre; break;
          default: g_new[s.pre] += d_pre; break;
        }
      }
    }
    g_new.swap(g_old);
  }
}

LtcParams NcpNet::extract(std::span<const double> params) const {
  const auto n = static_cast<std::size_t>(neurons());
  const auto s = wiring_.synapses.size();
  auto take = [&](std::size_t off, std::size_t len) {
    return std::vector<double>(params.begin() + off, params.begin() + off + len);
  };
  LtcParams out;
  out.tau = take(tau_, n);
  out.v_leak = take(v_leak_, n);
  out.weight = take(weight_, s);
  out.gate_slope = take(slope_, s);
  out.gate_mid = take(mid_, s);
  out.readout_weight = take(readout_w_, wiring_.motor);
  out.readout_bias = params[readout_b_];
  out.reversal.resize(s);
  for (std::size_t k = 0; k < s; ++k) out.reversal[k] = wiring_.synapses[k].polarity;
  return out;
}

LtcParams NcpNet::extract(std::span<const float> params) const {
  std::vector<double> wide(params.begin(), params.end());
  return extract(std::span<const double>(wide));
}

#define LATENT_STEER_INSTANTIATE(T)                                                                                  \
  template void NcpNet::step<T>(std::span<const T>, std::span<const T>, std::span<const T>, T, StepTape<T>&) const; \
  template T NcpNet::readout<T>(std::span<const T>, std::span<const T>) const;                                       \
  template void NcpNet::rollout<T>(std::span<const T>, std::span<const T>, int, T, RolloutTape<T>&) const;          \
  template void NcpNet::rollout_backward<T>(std::span<const T>, const RolloutTape<T>&, std::span<const T>, T,       \
                                            std::span<T>, std::span<T>) const;

LATENT_STEER_INSTANTIATE(float)
LATENT_STEER_INSTANTIATE(double)

#undef LATENT_STEER_INSTANTIATE

}  // namespace latent_steer
