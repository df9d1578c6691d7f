"""Hexagonal-lattice random walk with crowding-mediated proliferation and death.

The state is kept as an index grid (0 = empty, s + 1 = agent s of the live
list) so that uniform agent selection, moves, births and deaths are O(1).

Both sweeps select agents with replacement. A selection only matters when
its coin flip succeeds (probability Pm for motility, Pp|f| for proliferation),
and the live set is unchanged by failed selections, so the kernel skips
straight to the next successful Pm or Pp flip with a geometric gap and then
thins by |f|. This has the same law as flipping for every selection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ..core import BoxPrior, Streams, euclidean_discrepancy, frobenius_discrepancy
from ..samplers import EXACT, Discrepancy, Model

LOGISTIC = "logistic"
WEAK_ALLEE = "weak-allee"
_KIND_CODE = {LOGISTIC: 0, WEAK_ALLEE: 1}

# Daughter placement rules. "empty-neighbor": uniform over unoccupied
# neighbors, fails only when none is free. "abort": uniform over all
# neighbors, fails if the chosen one is occupied.
EMPTY_NEIGHBOR = "empty-neighbor"
ABORT = "abort"

_EVEN_DI = np.array([-1, 0, 1, 1, 0, -1], dtype=np.int64)
_EVEN_DJ = np.array([-1, -1, -1, 0, 1, 0], dtype=np.int64)
_ODD_DI = np.array([-1, 0, 1, 1, 0, -1], dtype=np.int64)
_ODD_DJ = np.array([0, -1, 0, 1, 1, 1], dtype=np.int64)


def neighbors(I: int, J: int, site) -> list[tuple[int, int]]:
    """In-bounds hexagonal neighbors of ``site``, in the fixed offset order."""
    i, j = int(site[0]), int(site[1])
    if not (0 <= i < I and 0 <= j < J):
        raise IndexError(f"site {(i, j)} outside {I}x{J} lattice")
    di, dj = (_EVEN_DI, _EVEN_DJ) if i % 2 == 0 else (_ODD_DI, _ODD_DJ)
    out = []
    for a, b in zip(di, dj):
        ni, nj = i + int(a), j + int(b)
        if 0 <= ni < I and 0 <= nj < J:
            out.append((ni, nj))
    return out


def site_coords(i: int, j: int, delta: float = 1.0) -> tuple[float, float]:
    x = i * math.sqrt(3.0) / 2.0 * delta
    y = (j + 0.5 * (i % 2)) * delta
    return x, y


@dataclass(frozen=True)
class CrowdingFunction:
    kind: str = LOGISTIC
    K: float = 1.0
    A: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown crowding function {self.kind!r}")
        if not self.K > 0:
            raise ValueError("carrying capacity K must be positive")
        if self.A < 0:
            raise ValueError("Allee parameter A must be non-negative")

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]


@numba.njit(cache=True)
def _crowding(code, K, A, c):
    f = 1.0 - c / K
    if code == 1:
        f *= (A + c) / K
    # Keeps Pp|f| a probability when K is small.
    return min(1.0, max(-1.0, f))


def crowding_eval(f: CrowdingFunction, c) -> float | np.ndarray:
    """f(c) clipped to [-1, 1]; negative values send the agent down the death branch."""
    c = np.asarray(c, dtype=float)
    if np.any((c < 0) | (c > 1)):
        raise ValueError("density must lie in [0, 1]")
    val = 1.0 - c / f.K
    if f.kind == WEAK_ALLEE:
        val = val * (f.A + c) / f.K
    val = np.clip(val, -1.0, 1.0)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class SimParams:
    Pm: float
    Pp: float
    crowding: CrowdingFunction = field(default_factory=CrowdingFunction)
    placement: str = EMPTY_NEIGHBOR

    def __post_init__(self):
        if not (0 <= self.Pm <= 1 and 0 <= self.Pp <= 1):
            raise ValueError("Pm and Pp must lie in [0, 1]")
        if self.placement not in (EMPTY_NEIGHBOR, ABORT):
            raise ValueError(f"unknown placement rule {self.placement!r}")


@dataclass
class LatticeState:
    occupied: np.ndarray
    t: float = 0.0
    delta: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        self.occupied = np.asarray(self.occupied, dtype=bool)
        if self.occupied.ndim != 2:
            raise ValueError("occupancy must be an I x J array")

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def count(self) -> int:
        return int(self.occupied.sum())

    def density(self) -> float:
        return float(self.occupied.mean())

    def column_density(self) -> np.ndarray:
        return self.occupied.mean(axis=1)

    def copy(self) -> "LatticeState":
        return LatticeState(self.occupied.copy(), self.t, self.delta, self.tau)

    def to_csv(self, path) -> None:
        """Occupancy grid as 0/1 rows, one row per i."""
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.occupied.astype(int).tolist())


@dataclass(frozen=True)
class Uniform:
    p: float


@dataclass(frozen=True)
class Scratch:
    """Bernoulli(p_out) outside columns [start, stop), empty inside."""

    p_out: float
    start: int
    stop: int


def init_lattice(I: int, J: int, spec, rng: np.random.Generator, delta: float = 1.0,
                 tau: float = 1.0) -> LatticeState:
    p = spec.p if isinstance(spec, Uniform) else spec.p_out
    if not 0 <= p <= 1:
        raise ValueError("occupancy probability must lie in [0, 1]")
    occ = rng.random((I, J)) < p
    if isinstance(spec, Scratch):
        if not 0 <= spec.start < spec.stop <= I:
            raise ValueError(f"scratch columns [{spec.start}, {spec.stop}) outside 0..{I}")
        occ[spec.start:spec.stop, :] = False
    return LatticeState(occ, 0.0, delta, tau)


def local_density(state: LatticeState, site) -> float:
    I, J = state.shape
    nb = neighbors(I, J, site)
    return sum(bool(state.occupied[a, b]) for a, b in nb) / len(nb)


@numba.njit(cache=True)
def _neighbors(i, j, I, J, out_i, out_j):
    if i % 2 == 0:
        di, dj = _EVEN_DI, _EVEN_DJ
    else:
        di, dj = _ODD_DI, _ODD_DJ
    c = 0
    for k in range(6):
        ni = i + di[k]
        nj = j + dj[k]
        if ni >= 0 and ni < I and nj >= 0 and nj < J:
            out_i[c] = ni
            out_j[c] = nj
            c += 1
    return c


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _gap(p):
    if p >= 1.0:
        return 1
    return np.random.geometric(p)


@numba.njit(cache=True)
def _check(grid, li, lj, n):
    occupied = 0
    for a in range(grid.shape[0]):
        for b in range(grid.shape[1]):
            if grid[a, b] != 0:
                occupied += 1
    if occupied != n:
        raise AssertionError("occupied-site count differs from agent count")
    for s in range(n):
        if grid[li[s], lj[s]] != s + 1:
            raise AssertionError("live list and grid disagree")


@numba.njit(cache=True)
def _advance(grid, li, lj, n, Pm, Pp, code, K, A, abort, nsteps, debug, counts):
    """Run ``nsteps`` steps in place; returns the new agent count.

    counts accumulates [selections, moves, births, deaths].
    """
    I, J = grid.shape
    ni = np.empty(6, np.int64)
    nj = np.empty(6, np.int64)
    fi = np.empty(6, np.int64)
    fj = np.empty(6, np.int64)
    for _ in range(nsteps):
        N = n
        if Pm > 0.0 and n > 0:
            k = -1
            while True:
                k += _gap(Pm)
                if k >= N:
                    break
                counts[0] += 1
                s = np.random.randint(0, n)
                i = li[s]
                j = lj[s]
                c = _neighbors(i, j, I, J, ni, nj)
                m = np.random.randint(0, c)
                if grid[ni[m], nj[m]] == 0:
                    grid[ni[m], nj[m]] = s + 1
                    grid[i, j] = 0
                    li[s] = ni[m]
                    lj[s] = nj[m]
                    counts[1] += 1
            if debug:
                if n != N:
                    raise AssertionError("motility sweep changed the agent count")
                _check(grid, li, lj, n)
        if Pp > 0.0:
            k = -1
            while n > 0:
                k += _gap(Pp)
                if k >= N:
                    break
                counts[0] += 1
                s = np.random.randint(0, n)
                i = li[s]
                j = lj[s]
                c = _neighbors(i, j, I, J, ni, nj)
                occ = 0
                for q in range(c):
                    if grid[ni[q], nj[q]] != 0:
                        occ += 1
                f = _crowding(code, K, A, occ / c)
                if np.random.random() >= abs(f):
                    continue
                if f >= 0.0:
                    if abort:
                        m = np.random.randint(0, c)
                        if grid[ni[m], nj[m]] != 0:
                            continue
                        ti = ni[m]
                        tj = nj[m]
                    else:
                        e = 0
                        for q in range(c):
                            if grid[ni[q], nj[q]] == 0:
                                fi[e] = ni[q]
                                fj[e] = nj[q]
                                e += 1
                        if e == 0:
                            continue
                        m = np.random.randint(0, e)
                        ti = fi[m]
                        tj = fj[m]
                    li[n] = ti
                    lj[n] = tj
                    grid[ti, tj] = n + 1
                    n += 1
                    counts[2] += 1
                else:
                    last = n - 1
                    grid[i, j] = 0
                    if s != last:
                        li[s] = li[last]
                        lj[s] = lj[last]
                        grid[li[s], lj[s]] = s + 1
                    n -= 1
                    counts[3] += 1
            if debug:
                _check(grid, li, lj, n)
    return n


class _Engine:
    """Mutable simulation buffers built from a LatticeState (row-major agent order)."""

    def __init__(self, state: LatticeState, params: SimParams, seed: int, debug: bool = False):
        I, J = state.shape
        self.grid = np.zeros((I, J), dtype=np.int64)
        self.li = np.empty(I * J, dtype=np.int64)
        self.lj = np.empty(I * J, dtype=np.int64)
        ii, jj = np.nonzero(state.occupied)
        self.n = ii.size
        self.li[:self.n] = ii
        self.lj[:self.n] = jj
        self.grid[ii, jj] = np.arange(1, self.n + 1)
        self.params = params
        self.debug = debug
        self.counts = np.zeros(4, dtype=np.int64)
        self.t = state.t
        self.delta, self.tau = state.delta, state.tau
        _seed(seed)

    def advance(self, nsteps: int) -> None:
        p = self.params
        cf = p.crowding
        self.n = _advance(self.grid, self.li, self.lj, self.n, p.Pm, p.Pp, cf.code, cf.K, cf.A,
                          p.placement == ABORT, int(nsteps), self.debug, self.counts)
        self.t += nsteps * self.tau

    def occupied(self) -> np.ndarray:
        return self.grid != 0

    def state(self) -> LatticeState:
        return LatticeState(self.occupied(), self.t, self.delta, self.tau)


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**32 - 1))


def step(state: LatticeState, params: SimParams, rng: np.random.Generator,
         debug: bool = False) -> LatticeState:
    """One duration-tau update (motility sweep, then proliferation sweep)."""
    eng = _Engine(state, params, _seed_from(rng), debug)
    eng.advance(1)
    return eng.state()


def _steps_between(state: LatticeState, times) -> list[int]:
    times = np.asarray(times, dtype=float)
    k = np.rint((times - state.t) / state.tau).astype(np.int64)
    if np.any(np.abs(k * state.tau + state.t - times) > 1e-9 * max(1.0, float(times.max()))):
        raise ValueError("observation times must be multiples of tau")
    if np.any(np.diff(np.concatenate([[0], k])) < 0):
        raise ValueError("observation times must be increasing and not before the state time")
    return np.diff(np.concatenate([[0], k])).tolist()


def simulate_growth(state: LatticeState, params: SimParams, times, rng: np.random.Generator,
                    debug: bool = False) -> np.ndarray:
    """Average lattice occupancy at each observation time, one realization."""
    eng = _Engine(state, params, _seed_from(rng), debug)
    out = []
    size = state.occupied.size
    for gap in _steps_between(state, times):
        eng.advance(gap)
        out.append(eng.n / size)
    return np.array(out)


def simulate_profile(state: LatticeState, params: SimParams, times, rng: np.random.Generator,
                     debug: bool = False) -> np.ndarray:
    """I x T matrix of column-averaged occupancy at each observation time."""
    eng = _Engine(state, params, _seed_from(rng), debug)
    cols = []
    for gap in _steps_between(state, times):
        eng.advance(gap)
        cols.append(eng.occupied().mean(axis=1))
    return np.column_stack(cols)


def simulate_events(state: LatticeState, params: SimParams, nsteps: int,
                    rng: np.random.Generator, debug: bool = True):
    """Run ``nsteps`` steps; returns (final state, [selections, moves, births, deaths])."""
    eng = _Engine(state, params, _seed_from(rng), debug)
    eng.advance(nsteps)
    return eng.state(), eng.counts.copy()


# Inference wrappers. tau = delta = 1 so lambda = Pp and D = Pm / 4.

@dataclass(frozen=True)
class AlleeSetup:
    I: int = 80
    J: int = 68
    Pm: float = 0.0
    p0: float = 0.25
    times: tuple[float, ...] = tuple(1000.0 * k for k in range(1, 11))
    placement: str = EMPTY_NEIGHBOR

    def params(self, theta) -> SimParams:
        lam, A, K = (float(v) for v in theta)
        return SimParams(self.Pm, lam, CrowdingFunction(WEAK_ALLEE, K, A), self.placement)

    def simulate(self, theta, rng) -> np.ndarray:
        state = init_lattice(self.I, self.J, Uniform(self.p0), rng)
        return simulate_growth(state, self.params(theta), self.times, rng)


def allee_prior() -> BoxPrior:
    """lambda ~ U(0, 0.005), A ~ U(0, 1), K ~ U(0, 1) with A <= K."""
    return BoxPrior([0.0, 0.0, 0.0], [0.005, 1.0, 1.0], constraints=((1, 2),))


def allee_model(setup: AlleeSetup) -> Model:
    return Model(setup.simulate, EXACT, "lattice-allee")


def allee_discrepancy(observed) -> Discrepancy:
    return Discrepancy(observed, euclidean_discrepancy)


@dataclass(frozen=True)
class ScratchSetup:
    I: int = 80
    J: int = 68
    p_out: float = 1.0 / 3.0
    start: int = 30
    stop: int = 50
    times: tuple[float, ...] = tuple(300.0 * k for k in range(1, 11))
    placement: str = EMPTY_NEIGHBOR

    @classmethod
    def scaled(cls, I: int, J: int, **kw) -> "ScratchSetup":
        """Same geometry on a smaller lattice: the empty band keeps its quarter share of columns."""
        width = max(1, round(I / 4))
        start = (I - width) // 2
        p_out = min(1.0, 0.25 * I / (I - width))
        return cls(I, J, p_out, start, start + width, **kw)

    def params(self, theta) -> SimParams:
        lam, D, K = (float(v) for v in theta)
        return SimParams(min(1.0, 4.0 * D), lam, CrowdingFunction(LOGISTIC, K), self.placement)

    def initial(self, rng) -> LatticeState:
        return init_lattice(self.I, self.J, Scratch(self.p_out, self.start, self.stop), rng)

    def simulate(self, theta, rng) -> np.ndarray:
        return simulate_profile(self.initial(rng), self.params(theta), self.times, rng)


def scratch_prior() -> BoxPrior:
    """lambda ~ U(0, 0.008), D = Pm / 4 with Pm ~ U(0, 1), K ~ U(0, 1)."""
    return BoxPrior([0.0, 0.0, 0.0], [0.008, 0.25, 1.0])


def scratch_model(setup: ScratchSetup) -> Model:
    return Model(setup.simulate, EXACT, "lattice-scratch")


def scratch_discrepancy(observed) -> Discrepancy:
    return Discrepancy(observed, frobenius_discrepancy)


def ensemble_growth(setup_state, params: SimParams, times, realizations: int,
                    streams: Streams) -> np.ndarray:
    """Mean of ``realizations`` growth curves; ``setup_state(rng)`` builds each initial state."""
    curves = []
    for k in range(realizations):
        rng = streams.rng(k)
        curves.append(simulate_growth(setup_state(rng), params, times, rng))
    return np.mean(curves, axis=0)
