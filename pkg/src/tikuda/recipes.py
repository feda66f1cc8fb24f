"""Ready-made synthetic adaptation runs.

The synthetic task pairs a source series with a shifted copy (see
:func:`tikuda.data.default_shift_spec`).  Half the sensors are precise but
get recalibrated in the target domain; the other half are noisy and unchanged.
A model that leans on the precise sensors transfers badly, which gives
feature alignment something real to fix.

Training uses the library defaults except for a shorter, faster schedule
(``SYNTHETIC_EPOCHS`` at ``SYNTHETIC_LR``) so a run fits in a few minutes on
one core.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from . import data, stgnn, trainer
from .alignment import AlignmentConfig

SYNTHETIC_EPOCHS = 40
SYNTHETIC_LR = 1e-3
SHIFTS = {
    "default": data.default_shift_spec,
    "scale": data.scale_dominant_shift_spec,
    "identity": lambda n_sensors, seed: data.ShiftSpec.identity(n_sensors, seed),
}


@dataclass(frozen=True)
class Task:
    source: data.WindowedDataset
    target: data.WindowedDataset
    graph: stgnn.GraphSpec
    model: stgnn.ModelConfig
    normalizer: data.Normalizer

    @property
    def label_range(self) -> float:
        return self.normalizer.label_range("y")


def synthetic_task(
    shift: str = "default",
    n_steps: int = 3000,
    n_sensors: int = 6,
    window: int = 16,
    data_seed: int = 0,
    shift_seed: int = 0,
) -> Task:
    """Windowed source/target pair on a fully connected sensor graph."""
    base, _ = data.generate_base(n_steps, n_sensors, seed=data_seed)
    src, tgt = data.synthesize_shift(base, SHIFTS[shift](n_sensors=n_sensors, seed=shift_seed))
    norm = data.fit_normalizer(src)
    S = data.make_windows(norm.apply(src), window, 1, "source")
    T = data.make_windows(norm.apply(tgt), window, 1, "target")
    model = stgnn.ModelConfig(n_nodes=n_sensors, window=window)
    return Task(S, T, stgnn.GraphSpec.full(n_sensors), model, norm)


def synthetic_config(method: str = "tikuda", seed: int = 0, **overrides) -> trainer.TrainConfig:
    cfg = trainer.TrainConfig(method=method, seed=seed, epochs=SYNTHETIC_EPOCHS, lr=SYNTHETIC_LR)
    return replace(cfg, **overrides)


def run(task: Task, cfg: trainer.TrainConfig, align_cfg: AlignmentConfig | None = None, on_epoch=None):
    """Train on ``task`` and return ``(params, report)``."""
    return trainer.train_adapt(
        task.source, task.target, task.graph, task.model, cfg, align_cfg,
        label_range=task.label_range, on_epoch=on_epoch,
    )
