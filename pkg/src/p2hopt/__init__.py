"""Cost-optimal operation of an industrial power-to-heat plant.

The plant couples high-temperature heat pumps, a sensible thermal storage,
an on-site wind turbine and the power grid.  Operation over a finite horizon
is posed as a Markov decision process with a three-dimensional state
(storage temperature, wind speed, electricity price) and solved two ways:

* exact backward dynamic programming on time-varying grids, with the noise
  expectation replaced by an optimal-quantizer cubature, and
* double Q-learning with a small feed-forward approximator.

Subpackages follow the pipeline: ``physical`` (deterministic plant model),
``exogenous`` (coupled wind/price process), ``calibration`` (fits from hourly
CSV data), ``costs`` (closed-form expected running cost, terminal cost),
``quantization`` (Gaussian quantizers and Voronoi-cell cubature), ``bdp``
(value iteration), ``qlearn`` (double Q-learning), ``simulate`` (rollouts and
policy evaluation) and ``cli``.
"""

__version__ = "0.1.0"
