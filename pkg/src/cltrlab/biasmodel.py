"""Per-rank bias schedules and the trust-bias click probability model.

A schedule holds, for each display rank k (1-based):

  theta_k      examination probability,
  eps_plus_k   probability an examined relevant item is perceived relevant,
  eps_minus_k  probability an examined non-relevant item is perceived relevant,

plus the derived affine click-model coefficients

  alpha_k = theta_k * (eps_plus_k - eps_minus_k)
  beta_k  = theta_k * eps_minus_k

so that P(click | relevance probability gamma, rank k) = alpha_k*gamma + beta_k.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

THETA_RANK_CAP = 20  # position bias stops decaying past this rank
EPS_MINUS_RANK_CAP = 10  # incorrect-click rate stops decaying past this rank

_TOL = 1e-12


@dataclass(eq=False)
class BiasSchedule:
    theta: np.ndarray
    eps_plus: np.ndarray
    eps_minus: np.ndarray
    checked: bool = True
    alpha: np.ndarray = field(init=False, repr=False)
    beta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.eps_plus = np.asarray(self.eps_plus, dtype=np.float64)
        self.eps_minus = np.asarray(self.eps_minus, dtype=np.float64)
        if not (self.theta.shape == self.eps_plus.shape == self.eps_minus.shape) or self.theta.ndim != 1:
            raise ValueError("theta, eps_plus, eps_minus must be 1-d arrays of equal length")
        if self.theta.size < 1:
            raise ValueError("schedule needs at least one rank")
        self.alpha = self.theta * (self.eps_plus - self.eps_minus)
        self.beta = self.theta * self.eps_minus
        if self.checked:
            self._validate()

    def _validate(self):
        if np.any(self.theta <= 0):
            raise ValueError("all theta_k must be positive")
        for name, arr in (("eps_plus", self.eps_plus), ("eps_minus", self.eps_minus)):
            if np.any(arr < -_TOL) or np.any(arr > 1 + _TOL):
                raise ValueError(f"{name} values must lie in [0, 1]")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha_k must be positive at every rank (clicks must correlate with relevance)")
        if np.any(self.beta < -_TOL) or np.any(self.alpha + self.beta > 1 + _TOL):
            raise ValueError("click probabilities leave [0, 1]: need beta_k >= 0 and alpha_k + beta_k <= 1")

    @property
    def max_rank(self) -> int:
        return int(self.theta.size)

    def truncated(self, max_rank: int) -> "BiasSchedule":
        if not 1 <= max_rank <= self.max_rank:
            raise ValueError(f"cannot truncate schedule of {self.max_rank} ranks to {max_rank}")
        return BiasSchedule(
            self.theta[:max_rank], self.eps_plus[:max_rank], self.eps_minus[:max_rank], self.checked
        )


def inverse_rank_schedule(eta: float, eps_minus_1: float, max_rank: int) -> BiasSchedule:
    """Benchmark schedule: position bias inversely proportional to rank.

    theta_k = (1/min(k,20))^eta, eps_plus_k = 1 - (min(k,20)+1)/100, and
    eps_minus_k = eps_minus_1 / min(k,10); the caps keep the perception
    probabilities from disappearing on deep ranks.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if not 0 < eps_minus_1 < 1:
        raise ValueError("eps_minus_1 must lie in (0, 1)")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    k = np.arange(1, max_rank + 1, dtype=np.float64)
    theta = (1.0 / np.minimum(k, THETA_RANK_CAP)) ** eta
    eps_plus = 1.0 - (np.minimum(k, THETA_RANK_CAP) + 1.0) / 100.0
    eps_minus = eps_minus_1 / np.minimum(k, EPS_MINUS_RANK_CAP)
    return BiasSchedule(theta, eps_plus, eps_minus)


def click_probability(schedule: BiasSchedule, gamma: float, rank: int) -> float:
    """P(click) for an item with relevance probability gamma displayed at rank."""
    if not 1 <= rank <= schedule.max_rank:
        raise ValueError(f"rank {rank} outside [1, {schedule.max_rank}]")
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma {gamma} outside [0, 1]")
    return float(schedule.alpha[rank - 1] * gamma + schedule.beta[rank - 1])


def ips_feasibility(schedule: BiasSchedule, tolerance: float) -> bool:
    """Whether any inverse-propensity reweighting could be unbiased here.

    True iff eps_plus_k / eps_plus_k' == eps_minus_k / eps_minus_k' for all
    rank pairs (within tolerance). False means the trust bias varies across
    ranks in a way no per-rank linear correction can undo.
    """
    if schedule.max_rank < 2:
        raise ValueError("feasibility needs at least two ranks")
    ep, em = schedule.eps_plus, schedule.eps_minus
    with np.errstate(divide="ignore", invalid="ignore"):
        rp = ep[:, None] / ep[None, :]
        rm = em[:, None] / em[None, :]
        diff = np.abs(rp - rm)
    both_zero = (em[:, None] == 0) & (em[None, :] == 0)
    diff = np.where(both_zero, 0.0, diff)
    diff = np.where(np.isnan(diff), np.inf, diff)
    return bool(np.all(diff <= tolerance))


def schedule_hash(schedule: BiasSchedule) -> str:
    """Short content hash of the per-rank table, for experiment records."""
    text = "\n".join(
        f"{k + 1},{schedule.theta[k]!r},{schedule.eps_plus[k]!r},{schedule.eps_minus[k]!r}"
        for k in range(schedule.max_rank)
    )
    return hashlib.sha256(text.encode()).hexdigest()[:10]


def write_schedule_csv(schedule: BiasSchedule, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("k,theta,eps_plus,eps_minus\n")
        for k in range(schedule.max_rank):
            fh.write(f"{k + 1},{schedule.theta[k]!r},{schedule.eps_plus[k]!r},{schedule.eps_minus[k]!r}\n")


def read_schedule_csv(path, checked: bool = True) -> BiasSchedule:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != "k,theta,eps_plus,eps_minus":
        raise ValueError(f"{path}: expected header 'k,theta,eps_plus,eps_minus'")
    rows = [ln.split(",") for ln in lines[1:]]
    ks = [int(r[0]) for r in rows]
    if ks != list(range(1, len(rows) + 1)):
        raise ValueError(f"{path}: ranks must be contiguous from 1")
    theta = np.array([float(r[1]) for r in rows])
    eps_plus = np.array([float(r[2]) for r in rows])
    eps_minus = np.array([float(r[3]) for r in rows])
    return BiasSchedule(theta, eps_plus, eps_minus, checked)
