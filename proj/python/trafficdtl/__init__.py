"""Cellular traffic forecasting with deep transfer learning (C++ core)."""

from ._core import (
    ConfigError,
    ConvergenceError,
    Model,
    NumericalError,
    build_model,
    energy_wh,
    format_percent,
    generate_site,
    load_model,
    lrp,
    masks,
    prepare,
    run,
    savings_percent,
    smoothgrad,
    svr_fit_predict,
    train,
    transfer,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "Model",
    "NumericalError",
    "build_model",
    "energy_wh",
    "format_percent",
    "generate_site",
    "load_model",
    "lrp",
    "masks",
    "prepare",
    "run",
    "savings_percent",
    "smoothgrad",
    "svr_fit_predict",
    "train",
    "transfer",
]
