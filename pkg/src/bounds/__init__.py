"""Time-resolved observability bounds for nonlinear systems and
observability-informed state estimation.

Modules
-------
dynamics       flying-agent models, integration and the measurement catalogue
trajectory     trajectories, setpoint generation and CSV exchange
mpc            receding-horizon tracking and a batched inverse tracker
observability  empirical observability matrix, Fisher information, Chernoff inverse
estimators     numpy estimator networks, data curation, the observability filter
aikf           square-root UKF and the augmented-information UKF
cli            scenario-driven command line front end
"""

__version__ = "0.1.0"
