"""Spiking networks with meta-learned three-factor plasticity for motor adaptation.

Subpackages
-----------
snn         leaky integrate-and-fire layers with surrogate gradients
plasticity  synaptic traces, pair-based STDP, dual eligibility traces,
            neuromodulated weight updates
kernels     fused per-timestep forward/backward kernels (numba-accelerated,
            pure-numpy fallback via SYNADAPT_NO_NUMBA=1)
metagrad    truncated BPTT through the plasticity dynamics + FD oracle
env         2-joint randomized-dynamics velocity-tracking testbed
rl          PPO / A2C on-policy training with GAE and timeout bootstrapping
pipeline    two-phase adaptation training, baselines, evaluation suite
cli         command-line entry points
"""

__version__ = "0.1.0"
