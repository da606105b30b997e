"""Exoatmospheric intercept simulation with strapdown-seeker scale-factor
error compensation.

Subpackage layout:

- ``quat``          scalar-first quaternion algebra
- ``dynamics``      rigid-body and target equations of motion (contract ops)
- ``fastpath``      fused scalar-arithmetic integrator mirroring ``dynamics``
- ``seeker``        body-frame seeker angles, scale-factor distortion, noise
- ``stabilization`` compensation and inertial stabilization of seeker angles
- ``estimator``     recurrent predictive network, gradients, optimizer
- ``guidance``      substitute proportional-navigation autopilot
- ``scenario``      engagement construction, termination, Monte Carlo stats
- ``trainer``       episodic rollout loop, replay buffers, online updates
- ``config``        run configuration schema and defaults
- ``cli``           command-line entry point
"""

__version__ = "0.1.0"
