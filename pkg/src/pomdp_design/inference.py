"""Forward filtering, windowed predictive distributions and the theta posterior.

Everything here is a pure function of immutable inputs.  Probabilities that
feed a logarithm are clamped at ``PROB_FLOOR`` first; a finite-difference
score whose evaluations all sit at the floor is defined to be zero, since
such outcomes carry no usable information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ImpossibleObservationError, ImpossibleWindowError, PosteriorAnnihilatedError
from .model import PROB_FLOOR, BeliefState, ModelFamily, PomdpModel


@dataclass(frozen=True)
class ThetaPosterior:
    """Weights over a finite, strictly increasing parameter grid."""

    grid: tuple
    weights: np.ndarray

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(grid),):
            raise ValueError("weights length must match grid")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must form a probability vector")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", w)

    @staticmethod
    def uniform(grid: Sequence[float]) -> "ThetaPosterior":
        n = len(tuple(grid))
        return ThetaPosterior(tuple(grid), np.full(n, 1.0 / n))

    def mean(self) -> float:
        return float(np.dot(self.grid, self.weights))

    def mode(self) -> float:
        return self.grid[int(np.argmax(self.weights))]


@dataclass(frozen=True)
class HistoryWindow:
    """The last few observations and the controls executed between them.

    ``obs`` is oldest-first.  ``ctrl`` normally holds one control fewer than
    there are observations (the transitions inside the window); models whose
    augmented state embeds the previously executed control carry one extra
    leading control that pins the state component at the window start.
    """

    obs: tuple
    ctrl: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "obs", tuple(int(y) for y in self.obs))
        object.__setattr__(self, "ctrl", tuple(int(u) for u in self.ctrl))
        if len(self.obs) < 1:
            raise ValueError("window needs at least one observation")
        if len(self.ctrl) not in (len(self.obs) - 1, len(self.obs)):
            raise ValueError(
                f"{len(self.obs)} observations admit {len(self.obs) - 1} or "
                f"{len(self.obs)} controls, got {len(self.ctrl)}"
            )

    @property
    def pinned(self) -> bool:
        return len(self.ctrl) == len(self.obs)

    def pin_control(self) -> Optional[int]:
        return self.ctrl[0] if self.pinned else None

    def step_controls(self) -> tuple:
        return self.ctrl[1:] if self.pinned else self.ctrl


def filter_step(
    model: PomdpModel,
    belief: BeliefState,
    u: int,
    y_next: int,
    y_prev: Optional[int] = None,
):
    """One Bayes update of the latent-state filter.

    Returns the posterior belief after executing control ``u`` and observing
    ``y_next``, together with the predictive probability of that observation
    (the normalizing constant).  ``y_prev`` is required only for models whose
    observation kernel looks back at the previous observation.
    """
    if not 0 <= u < model.l:
        raise IndexError(f"control index {u} out of range")
    if not 0 <= y_next < model.L:
        raise IndexError(f"observation index {y_next} out of range")
    b = belief.weights if isinstance(belief, BeliefState) else np.asarray(belief, float)
    e = model.emission_slice(y_next, y_prev)  # (x_prev, x_next) broadcastable
    joint = (b[:, None] * model.transition[u]) * e
    pred = float(joint.sum())
    if pred <= PROB_FLOOR:
        raise ImpossibleObservationError(y_next, u, y_prev)
    return BeliefState(joint.sum(axis=0) / pred), pred


def start_belief(
    model: PomdpModel,
    first_obs: int,
    nu: Optional[np.ndarray] = None,
    pin_control: Optional[int] = None,
) -> np.ndarray:
    """Belief over the state at a window start, given the oldest observation.

    The prior ``nu`` (default: the model's initial distribution) is first
    restricted to states consistent with a pinned embedded control, then
    reweighted by the emission of the oldest observation when the kernel has
    an x_next dependence; otherwise that observation informs only later
    steps through its y_prev role.
    """
    nu = model.initial_state if nu is None else np.asarray(nu, float)
    b = nu.copy()
    if pin_control is not None:
        if model.state_prev_control is None:
            raise ValueError("window pins a control but the state embeds none")
        b = np.where(np.array(model.state_prev_control) == pin_control, b, 0.0)
    if "x_next" in model.emission_mask:
        b = b * model.first_obs_kernel()[:, first_obs]
    total = b.sum()
    if total <= PROB_FLOOR:
        raise ImpossibleWindowError(
            HistoryWindow((first_obs,)), "window start has zero prior mass"
        )
    return b / total


def window_predictive(
    model: PomdpModel,
    window: HistoryWindow,
    u_t: int,
    nu: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Predictive law of the next observation given a history window.

    Initializes a belief from ``nu`` conditioned on the oldest observation,
    folds the filter through the window, then pushes one step forward under
    executed control ``u_t``.  The result sums to one.
    """
    if not 0 <= u_t < model.l:
        raise IndexError(f"control index {u_t} out of range")
    try:
        b = start_belief(model, window.obs[0], nu, window.pin_control())
        for i, u in enumerate(window.step_controls()):
            bs, _ = filter_step(model, BeliefState(b), u, window.obs[i + 1], window.obs[i])
            b = bs.weights
    except ImpossibleObservationError as exc:
        raise ImpossibleWindowError(window, str(exc)) from exc
    y_last = window.obs[-1]
    em = model.emission
    if "y_prev" in model.emission_mask:
        em = em[:, :, y_last : y_last + 1, :]
    e3 = np.broadcast_to(em[:, :, 0, :], (model.K, model.K, model.L))  # (x_next, x_prev, y)
    push = b[:, None] * model.transition[u_t]  # (x, x_next)
    return np.einsum("ij,jik->k", push, e3)


def score_fd(
    family: ModelFamily,
    evaluate: Callable[[float], "np.ndarray | float"],
    theta: float,
    h: Optional[float] = None,
):
    """Finite-difference derivative of ``log evaluate`` at ``theta``.

    Central differences inside the domain, one-sided at its edges, step
    ``1e-4 * max(1, |theta|)`` by default.  Entries whose evaluations all sit
    at the probability floor score zero.
    """
    if h is None:
        h = 1e-4 * max(1.0, abs(theta))
    lo, hi = family.theta_domain
    t_hi = theta + h
    t_lo = theta - h
    if t_hi > hi:
        t_hi = theta
    if t_lo < lo:
        t_lo = theta
    if t_hi == t_lo:
        raise ValueError("domain too small for the finite-difference step")
    f_hi = np.asarray(evaluate(t_hi), dtype=np.float64)
    f_lo = np.asarray(evaluate(t_lo), dtype=np.float64)
    dead = (f_hi <= PROB_FLOOR) | (f_lo <= PROB_FLOOR)
    score = (
        np.log(np.maximum(f_hi, PROB_FLOOR)) - np.log(np.maximum(f_lo, PROB_FLOOR))
    ) / (t_hi - t_lo)
    score = np.where(dead, 0.0, score)
    return score if score.ndim else float(score)


def fd_points(family: ModelFamily, theta: float, h: Optional[float] = None):
    """The two evaluation abscissae used by ``score_fd`` and their gap."""
    if h is None:
        h = 1e-4 * max(1.0, abs(theta))
    lo, hi = family.theta_domain
    t_hi = theta + h if theta + h <= hi else theta
    t_lo = theta - h if theta - h >= lo else theta
    if t_hi == t_lo:
        raise ValueError("domain too small for the finite-difference step")
    return t_lo, t_hi, t_hi - t_lo


def squared_score_from_probs(p_lo: np.ndarray, p_hi: np.ndarray, gap: float) -> np.ndarray:
    """Elementwise squared finite-difference log-score given the two evaluations."""
    dead = (np.asarray(p_hi) <= PROB_FLOOR) | (np.asarray(p_lo) <= PROB_FLOOR)
    s = (np.log(np.maximum(p_hi, PROB_FLOOR)) - np.log(np.maximum(p_lo, PROB_FLOOR))) / gap
    return np.where(dead, 0.0, s * s)


def loglikelihood_detail(
    family: ModelFamily,
    theta: float,
    y_seq: Sequence[int],
    u_seq: Sequence[int],
):
    """As ``loglikelihood`` but also reports where an impossible sequence broke.

    Returns ``(value, None)`` for a possible sequence and ``(-inf, t)`` with
    the index of the first impossible observation otherwise.
    """
    y_seq = list(y_seq)
    u_seq = list(u_seq)
    if len(u_seq) != len(y_seq) - 1:
        raise ValueError("need exactly one control per transition")
    model = family(theta)
    p0 = float(model.first_obs_law()[y_seq[0]])
    if p0 <= PROB_FLOOR:
        return -math.inf, 0
    total = math.log(p0)
    if "y_prev" in model.emission_mask:
        b = model.initial_state.copy()
    else:
        k = model.first_obs_kernel()[:, y_seq[0]] * model.initial_state
        b = k / k.sum()
    for t, u in enumerate(u_seq):
        try:
            bs, pred = filter_step(model, BeliefState(b), u, y_seq[t + 1], y_seq[t])
        except ImpossibleObservationError:
            return -math.inf, t + 1
        b = bs.weights
        total += math.log(pred)
    return total, None


def loglikelihood(
    family: ModelFamily,
    theta: float,
    y_seq: Sequence[int],
    u_seq: Sequence[int],
) -> float:
    """Log p(y_0..y_T | executed controls, theta); -inf for impossible data."""
    return loglikelihood_detail(family, theta, y_seq, u_seq)[0]


def posterior_update(post: ThetaPosterior, pred_probs: Sequence[float]) -> ThetaPosterior:
    """Bayes update of the grid posterior with per-point predictive probabilities."""
    p = np.asarray(pred_probs, dtype=np.float64)
    if p.shape != (len(post.grid),):
        raise ValueError("pred_probs length must match the grid")
    if np.any(p < 0):
        raise ValueError("pred_probs must be non-negative")
    w = post.weights * p
    total = w.sum()
    if total <= PROB_FLOOR:
        raise PosteriorAnnihilatedError(
            "every grid point assigns ~zero probability to the observation"
        )
    return ThetaPosterior(post.grid, w / total)
