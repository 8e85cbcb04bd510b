from dataclasses import dataclass, field, fields

import numpy as np

EXPERIMENTS = (
    'mde-scan', 'char-audit', 'locallaw-scan', 'flow-drift', 'flow-qv',
    'deloc', 'impbound', 'ensemble-compare',
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    N: int
    field: str = 'complex'
    distribution: str = 'gaussian'
    seed: int = 0
    trials: int = 1
    z: tuple = None
    eta: tuple = None
    eta_rule: str = 'product'
    c: float = 0.5
    C: float = 1.0
    xi: float = 0.005
    T: float = 0.1
    dt: float = None
    steps: int = 512
    grid_points: int = 40
    sizes: tuple = None
    noise: bool = True
    include_beta_term: bool = None
    sigma_max: float = 1.1
    compare_distribution: str = 'rademacher'
    compare_scale: float = 1.0
    compare_T: float = None
    envelope_factor: float = 10.0
    statistic_cap: float = 5.0
    ks_cap: float = 0.2
    a_star: float = 1e-2
    output: str = None

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def toDict(self):
        return {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in ((f.name, getattr(self, f.name)) for f in fields(self))
            if v is not None
        }


@dataclass
class ResultRecord:
    config: ExperimentConfig
    rows: list
    summary: dict
    criteria: dict
    timestamp: str
    wall_clock: float
    version: str
    columns: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.criteria.values())

    def toDict(self):
        return {
            'config': self.config.toDict(),
            'columns': self.columns,
            'rows': [jsonable(r) for r in self.rows],
            'summary': jsonable(self.summary),
            'criteria': {k: bool(v) for k, v in self.criteria.items()},
            'passed': self.passed,
            'timestamp': self.timestamp,
            'wall_clock': self.wall_clock,
            'version': self.version,
        }


def jsonable(value):
    '''numpy scalars and arrays to plain values, complex to [re, im]'''
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value
