"""Lower-left partial AUC: estimators, Top-K bounds, surrogate loss, trainer."""

from . import bounds, cli, data, loss, metrics, model, trainer

__all__ = ["metrics", "bounds", "loss", "model", "trainer", "data", "cli"]
__version__ = "0.1.0"
