"""Run configuration: built-in defaults, `.env` / environment overrides, CLI flags."""

import logging
import os
from dataclasses import asdict, dataclass, field, replace

from dotenv import load_dotenv

from tsauc_lab.errors import ValidationError

logger = logging.getLogger(__name__)

# Retained proportions for the population-reduction studies: 95% down to 35% by 10%
DEFAULT_FRACTIONS = (0.95, 0.85, 0.75, 0.65, 0.55, 0.45, 0.35)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    alpha: float = 0.05
    rate_hz: float = 25.0
    window_s: float | None = None
    n_trees: int = 200
    ls_min: int = 8
    ls_max: int = 19
    m_min: int = 1
    m_max: int = 8
    n_permutations: int = 1000
    runs: int = 20
    repeats: int = 12
    fractions: tuple = field(default=DEFAULT_FRACTIONS)
    n_jobs: int = 1
    condition: str | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.rate_hz <= 0:
            raise ValidationError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.window_s is not None and self.window_s <= 0:
            raise ValidationError(f"window_s must be positive, got {self.window_s}")
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if not 1 <= self.ls_min <= self.ls_max:
            raise ValidationError(f"need 1 <= ls_min <= ls_max, got {self.ls_min}..{self.ls_max}")
        if not 1 <= self.m_min <= self.m_max:
            raise ValidationError(f"need 1 <= m_min <= m_max, got {self.m_min}..{self.m_max}")
        if self.n_permutations < 99:
            raise ValidationError(f"n_permutations must be >= 99, got {self.n_permutations}")
        if self.runs < 1 or self.repeats < 1:
            raise ValidationError("runs and repeats must be >= 1")
        if self.n_jobs == 0:
            raise ValidationError("n_jobs must be non-zero (use -1 for all cores)")
        fractions = tuple(float(f) for f in self.fractions)
        if not fractions or any(not 0 < f <= 1 for f in fractions):
            raise ValidationError(f"fractions must lie in (0, 1], got {fractions}")
        if any(a <= b for a, b in zip(fractions, fractions[1:])):
            raise ValidationError(f"fractions must be strictly decreasing, got {fractions}")
        object.__setattr__(self, "fractions", fractions)

    @property
    def effective_window_s(self):
        return self.window_s if self.window_s is not None else 2.0 / self.rate_hz

    def search_space(self):
        # Imported here: models depend on config-free utils only
        from tsauc_lab.models.tsauc import SearchSpace

        return SearchSpace(
            ls_values=tuple(range(self.ls_min, self.ls_max + 1)),
            m_values=tuple(range(self.m_min, self.m_max + 1)),
            n_trees=self.n_trees,
            seed=self.seed,
        )

    def with_overrides(self, **overrides):
        """Copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self

    def to_dict(self):
        data = asdict(self)
        data["fractions"] = list(self.fractions)
        return data


def _env(name, cast):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError as e:
        raise ValidationError(f"environment variable {name}={raw!r} is invalid: {e}") from e


def load_config(dotenv_path=None):
    """
    Build the base configuration from built-in defaults and the environment

    Args:
        dotenv_path (str, optional): Explicit `.env` file; by default the nearest one is used

    Returns:
        RunConfig: Defaults with TSAUC_* environment overrides applied
    """
    load_dotenv(dotenv_path)
    config = RunConfig().with_overrides(
        seed=_env("TSAUC_SEED", int),
        alpha=_env("TSAUC_ALPHA", float),
        rate_hz=_env("TSAUC_RATE_HZ", float),
        n_trees=_env("TSAUC_TREES", int),
        n_permutations=_env("TSAUC_PERMUTATIONS", int),
        n_jobs=_env("TSAUC_N_JOBS", int),
    )
    logger.debug(f"Base configuration: {config.to_dict()}")
    return config


def log_level():
    return os.environ.get("TSAUC_LOG_LEVEL", "INFO").upper()
