from ._core import (
    ConfigError,
    DegenerateDensity,
    EnergyNetwork,
    Error,
    FilterPipeline,
    IoError,
    NumericalError,
    TrainConfig,
    TrainingDiverged,
    __version__,
    default_config,
    f_coefficients,
    fit_loglog,
    gauss_hermite,
    kalman_filter,
    load_pipeline,
    models,
    particle_filter,
    quad_filter,
    run,
    simulate_observations,
    standalone_fokker_planck,
    sup_error,
    train_pipeline,
)

import numpy as _np


def grid_nodes(grid):
    lower, upper, points = grid
    return _np.linspace(lower, upper, points)


def kalman_density(mean, variance, x):
    x = _np.asarray(x, dtype=float)
    return _np.exp(-0.5 * (x - mean) ** 2 / variance) / _np.sqrt(2.0 * _np.pi * variance)
