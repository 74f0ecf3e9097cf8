"""Monte Carlo region-of-attraction estimation.

Initial conditions are drawn uniformly from a box, each closed loop is
simulated on the nonlinear model, and a sample counts as stable once its
trajectory enters the certified invariant set.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import defaults
from .certification import CertifiedInvariantSet
from .controllers import DIVERGED, INFEASIBLE, LQRController
from .exceptions import ConfigError
from .model import TwipParams, is_diverged, step_nonlinear

logger = logging.getLogger(__name__)

STABLE = "certified-stable"
NOT_CERTIFIED = "not-certified"
FAIL_INFEASIBLE = "infeasible"
FAIL_DIVERGED = "diverged"
FAIL_HORIZON = "horizon-exhausted"

_AXES = ("xdot_w", "theta", "thetadot")


@dataclass(frozen=True)
class McConfig:
    """Sampling box, campaign size and simulation horizon.

    Parameters
    ----------
    ranges : dict
        ``(low, high)`` for ``xdot_w``, ``theta`` and ``thetadot``; ``x_w`` is 0.
    n_samples : int
    horizon : float
        Simulated time per sample [s].
    Ts : float
    substeps : int
        RK4 substeps per sampling interval.
    seed : int
    disturbance : bool
        Inject a random ``+-w_max`` input disturbance (exploration only).
    w_max : float
    """

    ranges: dict = field(default_factory=lambda: dict(defaults.MC_RANGES))
    n_samples: int = defaults.MC_SAMPLES
    horizon: float = defaults.MC_HORIZON
    Ts: float = defaults.TS
    substeps: int = defaults.SUBSTEPS
    seed: int = 0
    disturbance: bool = False
    w_max: float = defaults.W_MAX

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ConfigError(f"n_samples must be a positive integer, got {self.n_samples}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps}")
        if not self.Ts > 0 or not self.horizon > 0:
            raise ConfigError("horizon and Ts must be positive")
        steps = self.horizon / self.Ts
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"horizon {self.horizon} is not a multiple of Ts {self.Ts}")
        if set(self.ranges) != set(_AXES):
            raise ConfigError(f"ranges must define exactly {_AXES}, got {sorted(self.ranges)}")
        for k, (lo, hi) in self.ranges.items():
            if not lo <= hi:
                raise ConfigError(f"empty range for {k}: ({lo}, {hi})")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.Ts))


@dataclass(frozen=True)
class SampleResult:
    index: int
    initial_state: tuple
    controller: str
    verdict: str
    entry_step: int | None = None
    failure: str | None = None
    wall_time: float = 0.0

    def __post_init__(self):
        if (self.verdict == STABLE) != (self.entry_step is not None):
            raise ValueError("entry_step must be given exactly for certified-stable samples")
        if (self.verdict == NOT_CERTIFIED) != (self.failure is not None):
            raise ValueError("failure must be given exactly for not-certified samples")

    @property
    def stable(self) -> bool:
        return self.verdict == STABLE


def sample_initial_conditions(cfg: McConfig, indices=None) -> np.ndarray:
    """Uniform initial states; sample ``i`` depends only on ``(cfg.seed, i)``.

    Parameters
    ----------
    cfg : McConfig
    indices : array_like of int, optional
        Sample indices to draw; defaults to ``range(cfg.n_samples)``.

    Returns
    -------
    (k, 4) ndarray
        States ``[0, xdot_w, theta, thetadot]``.
    """
    indices = range(cfg.n_samples) if indices is None else indices
    lo = np.array([cfg.ranges[a][0] for a in _AXES], dtype=float)
    hi = np.array([cfg.ranges[a][1] for a in _AXES], dtype=float)
    out = []
    for i in indices:
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(i)]))
        out.append(np.concatenate([[0.0], lo + (hi - lo) * rng.random(3)]))
    return np.array(out).reshape(-1, 4)


def sample_hash(X) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype="<f8").tobytes()).hexdigest()


def _disturbance_rng(cfg: McConfig, index: int):
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(index), 1]))


def rollout(x0, policy, cset: CertifiedInvariantSet, cfg: McConfig,
            params: TwipParams | None = None, index: int = 0, controller: str = "") -> SampleResult:
    """Simulate one closed loop until it enters ``cset`` or fails.

    Membership is tested before every step, so a state already in the set
    returns ``entry_step = 0``.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    policy.reset()
    rng = _disturbance_rng(cfg, index) if cfg.disturbance else None

    def result(verdict, entry=None, failure=None):
        return SampleResult(index, tuple(float(v) for v in x0), controller, verdict, entry, failure,
                            time.perf_counter() - t0)

    for k in range(cfg.n_steps):
        if cset.contains(x):
            return result(STABLE, entry=k)
        u, status = policy.compute(x)
        if status == INFEASIBLE:
            return result(NOT_CERTIFIED, failure=FAIL_INFEASIBLE)
        if status == DIVERGED:
            return result(NOT_CERTIFIED, failure=FAIL_DIVERGED)
        if rng is not None:
            u = u + cfg.w_max * rng.choice((-1.0, 1.0))
        x = step_nonlinear(x, u, params, cfg.Ts, cfg.substeps)
        if is_diverged(x):
            return result(NOT_CERTIFIED, failure=FAIL_DIVERGED)
    if cset.contains(x):
        return result(STABLE, entry=cfg.n_steps)
    return result(NOT_CERTIFIED, failure=FAIL_HORIZON)


def rollout_lqr_batch(X0, lqr: LQRController, cset: CertifiedInvariantSet, cfg: McConfig,
                      params: TwipParams | None = None, indices=None, controller: str = "lqr"):
    """Vectorized :func:`rollout` for the saturated LQR over many initial states."""
    t0 = time.perf_counter()
    X0 = np.asarray(X0, dtype=float).reshape(-1, 4)
    n = len(X0)
    indices = np.arange(n) if indices is None else np.asarray(indices)
    K = lqr.K_[0]
    X = X0.copy()
    entry = np.full(n, -1)
    failure = np.full(n, None, dtype=object)
    active = np.ones(n, dtype=bool)
    rngs = [_disturbance_rng(cfg, i) for i in indices] if cfg.disturbance else None
    for k in range(cfg.n_steps + 1):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        inside = cset.contains(X[idx])
        entry[idx[inside]] = k
        active[idx[inside]] = False
        idx = idx[~inside]
        if k == cfg.n_steps:
            break
        bad = is_diverged(X[idx])
        failure[idx[bad]] = FAIL_DIVERGED
        active[idx[bad]] = False
        idx = idx[~bad]
        u = np.clip(-(X[idx] @ K), -lqr.u_max, lqr.u_max)
        if rngs is not None:
            u = u + cfg.w_max * np.array([rngs[i].choice((-1.0, 1.0)) for i in idx])
        X[idx] = step_nonlinear(X[idx], u, params, cfg.Ts, cfg.substeps)
    failure[active] = FAIL_HORIZON
    dt = (time.perf_counter() - t0) / max(n, 1)
    out = []
    for j in range(n):
        if entry[j] >= 0:
            out.append(SampleResult(int(indices[j]), tuple(map(float, X0[j])), controller, STABLE,
                                    int(entry[j]), None, dt))
        else:
            out.append(SampleResult(int(indices[j]), tuple(map(float, X0[j])), controller,
                                    NOT_CERTIFIED, None, failure[j], dt))
    return out


# worker-process state, set once per worker by the pool initializer
_WORKER = {}


def _init_worker(policy, cset, cfg, params, controller):
    _WORKER.update(policy=policy, cset=cset, cfg=cfg, params=params, controller=controller)


def _run_chunk(chunk):
    w = _WORKER
    indices, X0 = chunk
    if isinstance(w["policy"], LQRController):
        return rollout_lqr_batch(X0, w["policy"], w["cset"], w["cfg"], w["params"], indices,
                                 w["controller"])
    return [rollout(x0, w["policy"], w["cset"], w["cfg"], w["params"], int(i), w["controller"])
            for i, x0 in zip(indices, X0)]


def run_controller(policy, cset: CertifiedInvariantSet, cfg: McConfig, *, name: str,
                   params: TwipParams | None = None, indices=None, threads: int = 1,
                   chunk_size: int | None = None) -> list[SampleResult]:
    """Roll out one controller over the sample set, in ``threads`` worker processes."""
    indices = np.arange(cfg.n_samples) if indices is None else np.asarray(indices, dtype=int)
    X0 = sample_initial_conditions(cfg, indices)
    if chunk_size is None:
        chunk_size = 500 if isinstance(policy, LQRController) else 10
    chunks = [(indices[i:i + chunk_size], X0[i:i + chunk_size]) for i in range(0, len(indices), chunk_size)]
    if threads <= 1:
        _init_worker(policy, cset, cfg, params, name)
        results = [r for c in chunks for r in _run_chunk(c)]
    else:
        with ProcessPoolExecutor(threads, initializer=_init_worker,
                                 initargs=(policy, cset, cfg, params, name)) as pool:
            results = [r for rs in pool.map(_run_chunk, chunks) for r in rs]
    return sorted(results, key=lambda r: r.index)


@dataclass
class McSummary:
    """Per-controller stable fractions and cross-controller agreement.

    Attributes
    ----------
    controllers : list of str
    fractions : dict
        Stable fraction per controller.
    std_errors : dict
        Binomial standard error ``sqrt(p (1 - p) / n)`` per controller.
    failures : dict
        Failure-reason counts per controller.
    agreement : (k, k) ndarray
        Fraction of samples on which two controllers give the same verdict.
    runtime : dict
        Wall time per controller [s].
    n_samples : int
    sample_hash : str
    """

    controllers: list
    fractions: dict
    std_errors: dict
    failures: dict
    agreement: np.ndarray
    runtime: dict
    n_samples: int
    sample_hash: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agreement"] = np.asarray(self.agreement).tolist()
        return d


def summarize(results: dict, runtime: dict | None = None, sample_hash_: str = "") -> McSummary:
    """Aggregate ``{controller: [SampleResult, ...]}`` over a shared sample set."""
    names = list(results)
    n = len(results[names[0]])
    for name in names:
        if [r.index for r in results[name]] != [r.index for r in results[names[0]]]:
            raise ValueError(f"controller {name} was run on a different sample set")
    stable = {k: np.array([r.stable for r in v]) for k, v in results.items()}
    fractions = {k: float(v.mean()) for k, v in stable.items()}
    std = {k: float(np.sqrt(p * (1 - p) / n)) for k, p in fractions.items()}
    failures = {}
    for k, v in results.items():
        counts = {}
        for r in v:
            if r.failure:
                counts[r.failure] = counts.get(r.failure, 0) + 1
        failures[k] = counts
    agree = np.array([[float(np.mean(stable[a] == stable[b])) for b in names] for a in names])
    return McSummary(names, fractions, std, failures, agree, dict(runtime or {}), n, sample_hash_)


def run_campaign(policies: dict, cset: CertifiedInvariantSet, cfg: McConfig, *,
                 params: TwipParams | None = None, indices=None, threads: int = 1):
    """Run every controller in ``policies`` on the same samples.

    Returns
    -------
    summary : McSummary
    results : dict
        ``{name: [SampleResult, ...]}`` sorted by sample index.
    """
    if cset is None:
        raise ValueError("a certified invariant set is required as the stopping condition")
    indices = np.arange(cfg.n_samples) if indices is None else np.asarray(indices, dtype=int)
    results, runtime = {}, {}
    for name, policy in policies.items():
        t0 = time.perf_counter()
        results[name] = run_controller(policy, cset, cfg, name=name, params=params,
                                       indices=indices, threads=threads)
        runtime[name] = time.perf_counter() - t0
        logger.info("%s: %d samples in %.1f s", name, len(indices), runtime[name])
    h = sample_hash(sample_initial_conditions(cfg, indices))
    return summarize(results, runtime, h), results


CSV_FIELDS = ("index", "x_w", "xdot_w", "theta", "thetadot", "controller", "verdict",
              "entry_step", "failure", "wall_time")


def write_results(summary: McSummary, results: dict, out_dir, config: dict | None = None):
    """Write ``samples.csv``, ``summary.json`` and one scatter CSV per controller."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sorted((r for v in results.values() for r in v), key=lambda r: (r.index, r.controller))
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([r.index, *(repr(v) for v in r.initial_state), r.controller, r.verdict,
                        "" if r.entry_step is None else r.entry_step, r.failure or "",
                        f"{r.wall_time:.6f}"])
    for name, v in results.items():
        with open(out / f"scatter_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("xdot_w", "theta", "thetadot", "stable"))
            for r in v:
                w.writerow([repr(r.initial_state[1]), repr(r.initial_state[2]),
                            repr(r.initial_state[3]), int(r.stable)])
    data = summary.to_dict()
    if config is not None:
        data["config"] = config
    (out / "summary.json").write_text(json.dumps(data, indent=2, sort_keys=True))
    return out
