"""Short-term wind speed forecasting with stacked stateful/stateless LSTM and
GRU networks, implemented from first principles (cells, BPTT, Adam), plus
NOAA Local Climatological Data ingestion and an experiment harness."""

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    ParameterError,
    ShapeError,
    WindstackError,
)
from .numerics import OpCounter, Tensor2, count_ops, matmul, seeded_uniform

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tensor2",
    "OpCounter",
    "count_ops",
    "matmul",
    "seeded_uniform",
    "WindstackError",
    "ShapeError",
    "ParameterError",
    "ConfigError",
    "DataError",
    "DivergenceError",
]
