#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latent_steer/params.hpp"

namespace latent_steer {

enum class SynapseBank : std::uint8_t { kSensoryInter = 0, kInterCommand = 1, kCommandCommand = 2, kCommandMotor = 3 };

// `pre` indexes the latent input for kSensoryInter and the neuron array
// otherwise; `post` always indexes the neuron array (inter, command, motor).
struct Synapse {
  int pre = 0;
  int post = 0;
  int polarity = 1;
  SynapseBank bank = SynapseBank::kSensoryInter;

  bool operator==(const Synapse&) const = default;
};

struct WiringSpec {
  int sensory = 0;
  int inter = 0;
  int command = 0;
  int motor = 0;
  double sparsity = 0.0;
  std::uint64_t seed = 0;
  std::vector<Synapse> synapses;  // sorted by (post, bank, pre)

  int neurons() const { return inter + command + motor; }
  int first_command() const { return inter; }
  int first_motor() const { return inter + command; }

  // Throws ConfigError if a degree invariant or index bound is violated.
  void validate() const;

  bool operator==(const WiringSpec&) const = default;
};

// Each candidate synapse of the four banks is kept with probability
// 1 - sparsity, then a repair pass adds the fewest synapses that give every
// non-sensory neuron an input and every non-motor neuron an output.
WiringSpec build_wiring(int sensory, int inter, int command, int motor, double sparsity, std::uint64_t seed);

// Plain-value LTC parameters; reversal potentials are the synapse polarities.
struct LtcParams {
  std::vector<double> tau;     // per neuron, > 0
  std::vector<double> v_leak;  // per neuron
  std::vector<double> weight;  // per synapse, >= 0
  std::vector<double> gate_slope;
  std::vector<double> gate_mid;
  std::vector<double> reversal;
  std::vector<double> readout_weight;  // per motor neuron
  double readout_bias = 0.0;
};

using HiddenState = std::vector<double>;

// One fused semi-implicit step. Layers update in order inter -> command ->
// motor; feed-forward synapses see the presynaptic state of this step,
// recurrent command synapses see the previous one.
HiddenState ltc_step(const HiddenState& state, std::span<const double> input, const LtcParams& params,
                     const WiringSpec& wiring, double dt);

double ltc_readout(const HiddenState& state, const LtcParams& params, const WiringSpec& wiring);

// One steering value per frame, starting from `init`.
std::vector<double> rollout(std::span<const std::vector<double>> latent_seq, const LtcParams& params,
                            const WiringSpec& wiring, const HiddenState& init, double dt = 1.0);

// Differentiable NCP over a flat parameter vector.
class NcpNet {
 public:
  NcpNet() = default;
  NcpNet(const WiringSpec& wiring, ParamLayout& layout);

  const WiringSpec& wiring() const { return wiring_; }
  int neurons() const { return wiring_.neurons(); }
  int inputs() const { return wiring_.sensory; }

  template <typename T>
  struct StepTape {
    std::vector<T> old_state, new_state, den, pre, gate;
  };

  template <typename T>
  struct RolloutTape {
    std::vector<StepTape<T>> steps;
    std::vector<T> yhat;
  };

  template <typename T>
  void step(std::span<const T> params, std::span<const T> state, std::span<const T> input, T dt,
            StepTape<T>& tape) const;

  template <typename T>
  T readout(std::span<const T> params, std::span<const T> state) const;

  // inputs: frames x sensory, row-major.
  template <typename T>
  void rollout(std::span<const T> params, std::span<const T> inputs, int frames, T dt, RolloutTape<T>& tape) const;

  // d_inputs (frames x sensory) is overwritten; gradients accumulate in grad.
  template <typename T>
  void rollout_backward(std::span<const T> params, const RolloutTape<T>& tape, std::span<const T> d_yhat, T dt,
                        std::span<T> d_inputs, std::span<T> grad) const;

  LtcParams extract(std::span<const float> params) const;
  LtcParams extract(std::span<const double> params) const;

  std::size_t tau_offset() const { return tau_; }
  std::size_t v_leak_offset() const { return v_leak_; }
  std::size_t weight_offset() const { return weight_; }
  std::size_t gate_slope_offset() const { return slope_; }
  std::size_t gate_mid_offset() const { return mid_; }
  std::size_t readout_weight_offset() const { return readout_w_; }
  std::size_t readout_bias_offset() const { return readout_b_; }

 private:
  WiringSpec wiring_;
  std::size_t tau_ = 0, v_leak_ = 0, weight_ = 0, slope_ = 0, mid_ = 0, readout_w_ = 0, readout_b_ = 0;
};

}  // namespace latent_steer
