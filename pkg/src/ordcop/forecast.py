"""Monte-Carlo forecasting from a fitted system.

Each forecast step works series by series: the K-1 bivariate models
containing a series each imply a conditional distribution for it, obtained
by summing the pair's joint PMF over the partner's states.  Method A draws
one state from each implied distribution and keeps the most frequent draw
(ties broken uniformly at random); Method B averages the implied
distributions and draws once.  The drawn state vector feeds the next
step's history, and relative frequencies over many simulated paths
approximate the forecast distribution at every horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .combine import SystemFit
from .exceptions import DataError, DomainError
from .pairlik import PairModel, pair_pmf_matrix

DEFAULT_PATHS = 10_000


@dataclass(frozen=True)
class ForecastConfig:
    """Forecast run settings."""

    horizon: int
    n_paths: int = DEFAULT_PATHS
    method: str = "A"
    summary: str = "mode"
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.method not in ("A", "B"):
            raise DomainError(f"method must be 'A' or 'B', got {self.method!r}")
        if self.summary not in ("mode", "median"):
            raise DomainError(
                f"summary must be 'mode' or 'median', got {self.summary!r}"
            )


@dataclass(frozen=True)
class ForecastResult:
    """Per-horizon forecast distributions and point forecasts."""

    series_names: tuple[str, ...]
    horizon: int
    method: str
    summary: str
    frequencies: tuple[np.ndarray, ...]
    point: np.ndarray

    def frequency(self, series: int, step: int) -> np.ndarray:
        """Relative state frequencies of one series at horizon ``step``."""
        if not 1 <= step <= self.horizon:
            raise DomainError(f"step must be in 1..{self.horizon}, got {step}")
        return self.frequencies[series][step - 1]

    def records(self) -> list[dict]:
        """Flat rows: one per (horizon, series, state) plus point rows."""
        rows: list[dict] = []
        for k, name in enumerate(self.series_names):
            freq = self.frequencies[k]
            for h in range(self.horizon):
                for state, value in enumerate(freq[h], start=1):
                    rows.append({
                        "kind": "frequency",
                        "horizon": h + 1,
                        "series": name,
                        "state": state,
                        "value": float(value),
                    })
                rows.append({
                    "kind": "point",
                    "horizon": h + 1,
                    "series": name,
                    "state": int(self.point[h, k]),
                    "value": float("nan"),
                })
        return rows


def pair_marginal_probs(
    system: SystemFit,
    k: int,
    partner: int,
    history,
    estimator: str = "weighted",
) -> np.ndarray:
    """Conditional distribution of series k implied by one bivariate model.

    The pair (k, partner)'s joint PMF given the history is summed over the
    partner's states.
    """
    if k == partner:
        raise DomainError("a series cannot be its own forecast partner")
    r, s = min(k, partner), max(k, partner)
    model = system.pair_model(r, s, estimator)
    return _implied_marginal(model, k == r, np.asarray(history))


def _implied_marginal(
    model: PairModel, first: bool, history: np.ndarray
) -> np.ndarray:
    pmf = pair_pmf_matrix(model, history)
    probs = pmf.sum(axis=1) if first else pmf.sum(axis=0)
    return probs / probs.sum()


def summarize(frequencies, summary: str = "mode", rng=None) -> int:
    """Point forecast from a state-frequency vector (1-based state).

    The mode breaks exact ties uniformly at random; the median is the
    smallest state whose cumulative frequency reaches one half.
    """
    freq = np.asarray(frequencies, dtype=float)
    if freq.ndim != 1 or freq.size == 0 or np.any(freq < 0):
        raise DomainError("frequencies must be a nonnegative vector")
    if summary == "median":
        gamma = np.cumsum(freq) / freq.sum()
        return int(np.searchsorted(gamma, 0.5, side="left") + 1)
    if summary != "mode":
        raise DomainError(f"summary must be 'mode' or 'median', got {summary!r}")
    if rng is None:
        rng = np.random.default_rng()
    best = freq.max()
    tied = np.flatnonzero(freq == best)
    return int(rng.choice(tied) + 1)


def _history_block(system: SystemFit, initial_history) -> np.ndarray:
    layout = system.layout
    p = layout.specs[0].lag_order
    hist = np.asarray(initial_history, dtype=int)
    if hist.ndim != 2 or hist.shape[1] != layout.n_series:
        raise DataError(
            f"initial history must be (>= {p}, {layout.n_series}), "
            f"got {hist.shape}"
        )
    if hist.shape[0] < p:
        raise DataError(
            f"initial history needs at least {p} time points, got {hist.shape[0]}"
        )
    hist = hist[-p:]
    for j, space in enumerate(layout.specs[0].state_spaces):
        col = hist[:, j]
        if col.min() < 1 or col.max() > space.n_states:
            raise DataError(
                f"history states of series {j} outside 1..{space.n_states}"
            )
    return hist


def forecast_paths(
    system: SystemFit,
    config: ForecastConfig,
    initial_history,
    estimator: str = "weighted",
) -> ForecastResult:
    """Simulate B forecast paths and tabulate state frequencies.

    All Monte-Carlo draws come from one seeded stream consumed in a fixed
    order, so results are identical across runs with the same inputs.
    Paths are advanced jointly: at each horizon the implied distributions
    are computed once per distinct history and shared by all paths in that
    history.
    """
    layout = system.layout
    k_series = layout.n_series
    d = [space.n_states for space in layout.specs[0].state_spaces]
    p = layout.specs[0].lag_order
    hist0 = _history_block(system, initial_history)
    rng = np.random.default_rng(config.seed)
    b = config.n_paths

    models: dict[tuple[int, int], PairModel] = {
        (r, s): system.pair_model(r, s, estimator) for r, s in layout.pairs
    }
    partners = {
        k: [((min(k, s), max(k, s)), k < s) for s in range(k_series) if s != k]
        for k in range(k_series)
    }
    pmf_cache: dict[tuple[tuple[int, int], bytes], np.ndarray] = {}

    def implied_tables(pair, first, uniq_hists):
        model = models[pair]
        rows = []
        for hstate in uniq_hists:
            key = (pair, hstate.tobytes())
            pmf = pmf_cache.get(key)
            if pmf is None:
                pmf = pair_pmf_matrix(model, hstate)
                pmf_cache[key] = pmf
            probs = pmf.sum(axis=1) if first else pmf.sum(axis=0)
            rows.append(probs / probs.sum())
        return np.asarray(rows)

    def draw(table_cdf, inverse):
        # table_cdf rows end exactly at 1, so u in [0, 1) always lands
        cdf = table_cdf[inverse]
        u = rng.random(b)
        return np.argmax(u[:, None] < cdf, axis=1)

    # (b, p, K) rolling histories, identical at the start
    hists = np.broadcast_to(hist0, (b, p, k_series)).copy()
    freqs = [np.zeros((config.horizon, d[k])) for k in range(k_series)]
    point = np.zeros((config.horizon, k_series), dtype=int)

    for h in range(config.horizon):
        flat = hists.reshape(b, p * k_series)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        uniq_hists = uniq.reshape(-1, p, k_series)
        new_states = np.empty((b, k_series), dtype=np.int64)
        for k in range(k_series):
            # implied distribution of series k per unique history and partner
            tables = np.stack([
                implied_tables(pair, first, uniq_hists)
                for pair, first in partners[k]
            ])
            if config.method == "A":
                draws = np.empty((b, tables.shape[0]), dtype=np.int64)
                for j in range(tables.shape[0]):
                    cdf = np.cumsum(tables[j], axis=1)
                    cdf[:, -1] = 1.0
                    draws[:, j] = draw(cdf, inverse)
                counts = np.zeros((b, d[k]))
                for j in range(draws.shape[1]):
                    counts[np.arange(b), draws[:, j]] += 1.0
                # jitter below 1/2 never crosses a full-count gap, so the
                # argmax is uniform over the tied states
                counts += 0.5 * rng.random((b, d[k]))
                new_states[:, k] = np.argmax(counts, axis=1) + 1
            else:
                cdf = np.cumsum(tables.mean(axis=0), axis=1)
                cdf[:, -1] = 1.0
                new_states[:, k] = draw(cdf, inverse) + 1
        for k in range(k_series):
            freqs[k][h] = np.bincount(
                new_states[:, k], minlength=d[k] + 1
            )[1:] / b
        if p > 1:
            hists[:, :-1] = hists[:, 1:]
        hists[:, -1] = new_states

    for h in range(config.horizon):
        for k in range(k_series):
            point[h, k] = summarize(freqs[k][h], config.summary, rng)

    return ForecastResult(
        series_names=layout.series_names,
        horizon=config.horizon,
        method=config.method,
        summary=config.summary,
        frequencies=tuple(freqs),
        point=point,
    )
