"""Synthetic charge-stability-diagram generator.

Produces labeled five-state CSDs from a small geometric parameterization:
turn-on thresholds split the plunger plane into the no-dot / single-dot /
double-dot regions, and each region gets its own family of smoothed
charge-transition lines (vertical for the right dot, horizontal for the
left dot, anti-diagonal for the merged central dot, and two cross-coupled
tilted families in the double-dot honeycomb region). The generator is a
geometric surrogate for sensor data, not a device simulation: its job is
to provide class-distinguishable textures with exact pixel labels.

State indices: 0=ND, 1=SD_L, 2=SD_C, 3=SD_R, 4=DD.
Array convention: ``signal[row, col]`` with rows indexed by ``v2_axis``
(left-dot plunger) and columns by ``v1_axis`` (right-dot plunger).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

N_STATES = 5
STATE_ND, STATE_SDL, STATE_SDC, STATE_SDR, STATE_DD = range(N_STATES)
STATE_NAMES = ("ND", "SD_L", "SD_C", "SD_R", "DD")


@dataclass(frozen=True)
class SynthParams:
    """Generator parameters. Voltages live on the unit axis range [0, 1]."""

    grid_size: int = 250
    v1_on: float = 0.25       # right-dot turn-on (columns)
    v2_on: float = 0.25       # left-dot turn-on (rows)
    v_merge: float = 0.65     # dots merge where V1 + V2 >= 2 * v_merge
    period1: float = 10.0     # transition-line spacing along V1, in pixels
    period2: float = 10.0     # transition-line spacing along V2, in pixels
    cross12: float = 0.2      # cross-capacitance slope, dot 1 lines vs V2
    cross21: float = 0.2      # cross-capacitance slope, dot 2 lines vs V1
    edge_width: float = 1.2   # Gaussian line width, in pixels
    noise_white: float = 0.05  # white-noise sigma relative to unit line contrast
    noise_gradient: float = 0.1  # total linear background swing across the scan
    seed: int = 0

    def validate(self) -> None:
        if self.grid_size < 30:
            raise ParameterError(f"grid_size must be >= 30, got {self.grid_size}")
        for name in ("cross12", "cross21"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ParameterError(f"{name} must lie in (0, 0.5), got {v}")
        for name in ("period1", "period2"):
            v = getattr(self, name)
            if v <= 0.0:
                raise ParameterError(f"{name} must be > 0, got {v}")
        if self.edge_width <= 0.0:
            raise ParameterError(f"edge_width must be > 0, got {self.edge_width}")
        if not self.v1_on < self.v_merge:
            raise ParameterError(
                f"v1_on must be < v_merge, got v1_on={self.v1_on}, v_merge={self.v_merge}"
            )
        if not self.v2_on < self.v_merge:
            raise ParameterError(
                f"v2_on must be < v_merge, got v2_on={self.v2_on}, v_merge={self.v_merge}"
            )


@dataclass
class CSDRecord:
    """One synthetic or ingested charge stability diagram.

    ``signal`` and ``state_map`` share the same (rows, cols) shape; rows map
    to ``v2_axis`` and columns to ``v1_axis``.
    """

    signal: np.ndarray
    state_map: np.ndarray
    v1_axis: np.ndarray
    v2_axis: np.ndarray
    record_id: str
    noise_id: str

    def validate(self) -> None:
        from .errors import DataError

        if self.signal.shape != self.state_map.shape:
            raise DataError(
                f"record {self.record_id}: signal shape {self.signal.shape} "
                f"!= state_map shape {self.state_map.shape}"
            )
        rows, cols = self.signal.shape
        if self.v2_axis.shape != (rows,) or self.v1_axis.shape != (cols,):
            raise DataError(
                f"record {self.record_id}: axis lengths {self.v1_axis.shape}/"
                f"{self.v2_axis.shape} do not match shape {self.signal.shape}"
            )
        if self.state_map.min() < 0 or self.state_map.max() >= N_STATES:
            raise DataError(
                f"record {self.record_id}: state_map values outside 0..{N_STATES - 1}"
            )
        for name, axis in (("v1_axis", self.v1_axis), ("v2_axis", self.v2_axis)):
            if np.any(np.diff(axis) <= 0):
                raise DataError(f"record {self.record_id}: {name} not strictly increasing")


def _folded_distance(phase: np.ndarray, period: float) -> np.ndarray:
    """Distance from a phase coordinate to the nearest multiple of period."""
    m = np.mod(phase, period)
    return np.minimum(m, period - m)


def _line_profile(distance: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-0.5 * (distance / width) ** 2)


def compute_state_map(params: SynthParams) -> np.ndarray:
    """Piecewise five-state partition of the plunger plane.

    ND below both turn-ons; SD_R right of v1_on only; SD_L above v2_on only;
    SD_C wherever V1 + V2 >= 2 * v_merge (merge wins over everything);
    DD elsewhere.
    """
    n = params.grid_size
    v = np.linspace(0.0, 1.0, n)
    v1 = v[np.newaxis, :]  # columns
    v2 = v[:, np.newaxis]  # rows

    state = np.full((n, n), STATE_DD, dtype=np.uint8)
    state[(v1 < params.v1_on) & (v2 < params.v2_on)] = STATE_ND
    state[(v1 >= params.v1_on) & (v2 < params.v2_on)] = STATE_SDR
    state[(v1 < params.v1_on) & (v2 >= params.v2_on)] = STATE_SDL
    state[v1 + v2 >= 2.0 * params.v_merge] = STATE_SDC
    return state


def generate_csd(params: SynthParams, record_id: str | None = None) -> CSDRecord:
    """Generate one labeled CSD. Bit-identical for identical params."""
    params.validate()
    n = params.grid_size
    axis = np.linspace(0.0, 1.0, n)
    state = compute_state_map(params)

    # Pixel-space coordinates; turn-on thresholds anchor the line families.
    col = np.arange(n, dtype=np.float64)[np.newaxis, :]
    row = np.arange(n, dtype=np.float64)[:, np.newaxis]
    c_on = params.v1_on * (n - 1)
    r_on = params.v2_on * (n - 1)
    ew = params.edge_width

    signal = np.zeros((n, n), dtype=np.float64)

    # SD_R: lines perpendicular to the V1 axis, spaced period1 pixels.
    d = _folded_distance(col - c_on, params.period1)
    signal += np.where(state == STATE_SDR, _line_profile(d, ew), 0.0)

    # SD_L: lines perpendicular to the V2 axis, spaced period2 pixels.
    d = _folded_distance(row - r_on, params.period2)
    signal += np.where(state == STATE_SDL, _line_profile(d, ew), 0.0)

    # SD_C: anti-diagonal lines of constant V1 + V2.
    p_c = 0.5 * (params.period1 + params.period2)
    s_merge = 2.0 * params.v_merge * (n - 1)
    d = _folded_distance((col + row) - s_merge, p_c) / np.sqrt(2.0)
    signal += np.where(state == STATE_SDC, _line_profile(d, ew), 0.0)

    # DD: two superposed cross-coupled families (honeycomb approximation).
    u = (col + params.cross12 * row) - (c_on + params.cross12 * r_on)
    d1 = _folded_distance(u, params.period1) / np.sqrt(1.0 + params.cross12**2)
    w = (row + params.cross21 * col) - (r_on + params.cross21 * c_on)
    d2 = _folded_distance(w, params.period2) / np.sqrt(1.0 + params.cross21**2)
    dd_lines = np.maximum(_line_profile(d1, ew), _line_profile(d2, ew))
    signal += np.where(state == STATE_DD, dd_lines, 0.0)

    # Linear sensor background plus white noise.
    if params.noise_gradient != 0.0:
        signal += params.noise_gradient * 0.5 * (col / (n - 1) + row / (n - 1))
    if params.noise_white > 0.0:
        rng = np.random.default_rng(params.seed)
        signal += rng.normal(0.0, params.noise_white, size=(n, n))

    rid = record_id if record_id is not None else f"synth-{params.seed}"
    return CSDRecord(
        signal=signal,
        state_map=state,
        v1_axis=axis.copy(),
        v2_axis=axis.copy(),
        record_id=rid,
        noise_id=f"seed{params.seed}",
    )


def default_params(seed: int, grid_size: int = 250) -> SynthParams:
    """Randomized generator parameters, deterministic in seed.

    Ranges: turn-ons uniform in [0.15, 0.33] (lower third of the axis),
    merge threshold in [0.55, 0.75], periods in [6, 14] pixels, crosses in
    [0.1, 0.35], edge width in [0.8, 1.6] pixels, white noise sigma in
    [0.02, 0.15], background gradient in [0, 0.3].
    """
    rng = np.random.default_rng(seed)
    params = SynthParams(
        grid_size=grid_size,
        v1_on=rng.uniform(0.15, 0.33),
        v2_on=rng.uniform(0.15, 0.33),
        v_merge=rng.uniform(0.55, 0.75),
        period1=rng.uniform(6.0, 14.0),
        period2=rng.uniform(6.0, 14.0),
        cross12=rng.uniform(0.1, 0.35),
        cross21=rng.uniform(0.1, 0.35),
        edge_width=rng.uniform(0.8, 1.6),
        noise_white=rng.uniform(0.02, 0.15),
        noise_gradient=rng.uniform(0.0, 0.3),
        seed=seed,
    )
    params.validate()
    return params
