"""Parametric finite POMDP representation, validation and structural transforms.

A model couples a controlled latent chain with an observation channel.  The
transition tensor is always stored row-stochastic: ``transition[u, i, j]`` is
the probability of moving from latent state ``i`` to ``j`` under executed
control ``u``.  The observation kernel is kept in a single broadcastable
4-D tensor whose axes are ``(x_next, x_prev, y_prev, y_next)``; axes the
kernel does not depend on have length one.  Which axes are live is recorded
in ``emission_mask`` (subset of ``{"x_next", "x_prev", "y_prev"}``), with the
default ``{"x_next"}`` giving the familiar p(y | x) channel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

# Probabilities are clamped here before any logarithm is taken; discretized
# Gaussian tails underflow long before float64 does.
PROB_FLOOR = 1e-12

STOCHASTIC_ATOL = 1e-12
EMISSION_AXES = ("x_next", "x_prev", "y_prev")


def _frozen(a) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ControlSet:
    """Finite set of control labels; the control index is the list position."""

    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) == 0:
            raise ValueError("control set must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("control labels must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class BeliefState:
    """Probability vector over latent states."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1:
            raise ValueError("belief weights must be a vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("belief weights must be a probability vector")
        object.__setattr__(self, "weights", w)

    def argmax(self) -> int:
        # ties broken toward the lowest state index
        return int(np.argmax(self.weights))


@dataclass(frozen=True)
class PomdpModel:
    """Immutable finite POMDP: tensors plus the conventions needed to use them.

    Fields
    ------
    transition : (l, K, K) row-stochastic per (u, x_from) slice
    emission : broadcastable (K|1, K|1, L|1, L), normalized over the last axis
    emission_mask : which of x_next / x_prev / y_prev the kernel depends on
    initial_state : (K,) law of the latent state at time 0
    initial_obs : (L,) law of y_0 when the kernel depends on y_prev, else None
    randomizer : (l, l) row-stochastic map from chosen to executed control
    state_prev_control : optional per-state embedded previous-control index,
        set by builders whose augmented state carries the last executed
        control; lets window-based solvers pin the known control component
        of the window-start prior
    """

    controls: ControlSet
    transition: np.ndarray
    emission: np.ndarray
    emission_mask: frozenset = frozenset({"x_next"})
    initial_state: np.ndarray = None
    initial_obs: Optional[np.ndarray] = None
    randomizer: Optional[np.ndarray] = None
    state_prev_control: Optional[tuple] = None

    def __post_init__(self):
        trans = _frozen(self.transition)
        if trans.ndim != 3 or trans.shape[1] != trans.shape[2]:
            raise ValueError("transition must have shape (l, K, K)")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "emission_mask", frozenset(self.emission_mask))
        emis = _frozen(self.emission)
        if emis.ndim != 4:
            raise ValueError("emission must have axes (x_next, x_prev, y_prev, y_next)")
        object.__setattr__(self, "emission", emis)
        init = self.initial_state
        if init is None:
            init = np.full(self.K, 1.0 / self.K)
        object.__setattr__(self, "initial_state", _frozen(init))
        if self.initial_obs is not None:
            object.__setattr__(self, "initial_obs", _frozen(self.initial_obs))
        rand = self.randomizer
        if rand is None:
            rand = np.eye(len(self.controls))
        object.__setattr__(self, "randomizer", _frozen(rand))
        if self.state_prev_control is not None:
            object.__setattr__(
                self, "state_prev_control", tuple(int(c) for c in self.state_prev_control)
            )

    @property
    def K(self) -> int:
        return self.transition.shape[1]

    @property
    def L(self) -> int:
        return self.emission.shape[3]

    @property
    def l(self) -> int:
        return len(self.controls)

    @property
    def has_standard_emission(self) -> bool:
        return self.emission_mask == frozenset({"x_next"})

    def emission_std(self) -> np.ndarray:
        """The (K, L) kernel p(y | x); only defined for the default mask."""
        if not self.has_standard_emission:
            raise ValueError("model emission depends on history; no (K, L) form")
        return self.emission[:, 0, 0, :]

    def emission_slice(self, y_next: int, y_prev: Optional[int] = None) -> np.ndarray:
        """Kernel values for a fixed observation, broadcastable over (x_prev, x_next)."""
        yp = 0
        if "y_prev" in self.emission_mask:
            if y_prev is None:
                raise ValueError("emission depends on y_prev but none was given")
            yp = y_prev
        # -> (x_prev, x_next), singleton axes broadcast
        return self.emission[:, :, yp, y_next].T

    def first_obs_kernel(self) -> np.ndarray:
        """(K, L) law of y_0 given x_0.

        With a y_prev-dependent kernel the first observation follows
        ``initial_obs`` independently of the state; otherwise the emission is
        used with any x_prev dependence collapsed onto x_0 itself.
        """
        if "y_prev" in self.emission_mask:
            if self.initial_obs is None:
                raise ValueError("y_prev-dependent emission requires initial_obs")
            return np.broadcast_to(self.initial_obs, (self.K, self.L))
        if "x_prev" in self.emission_mask:
            k = np.arange(self.K)
            e = np.broadcast_to(self.emission, (self.K, self.K, 1, self.L))
            return e[k, k, 0, :]
        return np.broadcast_to(self.emission[:, 0, 0, :], (self.K, self.L))

    def first_obs_law(self, nu: Optional[np.ndarray] = None) -> np.ndarray:
        """(L,) marginal law of the first observation."""
        nu = self.initial_state if nu is None else np.asarray(nu, float)
        return nu @ self.first_obs_kernel()


@dataclass(frozen=True)
class ModelFamily:
    """Map from a scalar parameter to a structurally fixed POMDP."""

    theta_domain: tuple
    build: Callable[[float], PomdpModel]
    name: str = "family"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        lo, hi = self.theta_domain
        if not lo < hi:
            raise ValueError("theta_domain must be a non-degenerate interval")
        object.__setattr__(self, "theta_domain", (float(lo), float(hi)))

    def __call__(self, theta: float) -> PomdpModel:
        lo, hi = self.theta_domain
        if not lo <= theta <= hi:
            raise ValueError(f"theta={theta} outside domain [{lo}, {hi}]")
        key = float(theta)
        hit = self._cache.get(key)
        if hit is None:
            hit = self.build(key)
            if len(self._cache) > 2048:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def clip(self, theta: float) -> float:
        lo, hi = self.theta_domain
        return min(max(theta, lo), hi)


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    detail: str

    def __str__(self):
        return f"[{self.kind}] {self.location}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def __str__(self):
        if self.ok:
            return "model valid"
        return "\n".join(str(v) for v in self.violations)


def validate_model(model: PomdpModel) -> ValidationReport:
    """Check every structural invariant; never raises, reports all violations."""
    bad = []

    def check_rows(name, arr, axis=-1, atol=STOCHASTIC_ATOL):
        sums = arr.sum(axis=axis)
        err = np.abs(sums - 1.0)
        if np.any(err > atol):
            idx = np.unravel_index(int(np.argmax(err)), sums.shape)
            bad.append(
                Violation("stochasticity", f"{name}{idx}", f"slice sums to {sums[idx]:.15g}")
            )
        if np.any(arr < 0):
            idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
            bad.append(Violation("negativity", f"{name}{idx}", f"entry {arr[idx]:.15g} < 0"))

    check_rows("transition", model.transition)

    mask = model.emission_mask
    if not mask <= set(EMISSION_AXES):
        bad.append(Violation("emission_mask", "emission_mask", f"unknown axes in {sorted(mask)}"))
    expect = (
        model.K if "x_next" in mask else 1,
        model.K if "x_prev" in mask else 1,
        model.L if "y_prev" in mask else 1,
        model.L,
    )
    if model.emission.shape != expect:
        bad.append(
            Violation(
                "shape",
                "emission",
                f"shape {model.emission.shape} does not match mask {sorted(mask)}; expected {expect}",
            )
        )
    else:
        check_rows("emission", model.emission)

    if model.initial_state.shape != (model.K,):
        bad.append(Violation("shape", "initial_state", f"shape {model.initial_state.shape}"))
    else:
        check_rows("initial_state", model.initial_state[None, :])
    if "y_prev" in mask:
        if model.initial_obs is None:
            bad.append(
                Violation("missing", "initial_obs", "required when emission depends on y_prev")
            )
        elif model.initial_obs.shape != (model.L,):
            bad.append(Violation("shape", "initial_obs", f"shape {model.initial_obs.shape}"))
        else:
            check_rows("initial_obs", model.initial_obs[None, :])

    if model.randomizer.shape != (model.l, model.l):
        bad.append(Violation("shape", "randomizer", f"shape {model.randomizer.shape}"))
    else:
        check_rows("randomizer", model.randomizer)

    if model.state_prev_control is not None:
        spc = model.state_prev_control
        if len(spc) != model.K or any(not 0 <= c < model.l for c in spc):
            bad.append(Violation("shape", "state_prev_control", f"bad map {spc}"))
        else:
            # executed control u must land only on states whose embedded
            # previous-control component equals u
            spc_arr = np.array(spc)
            for u in range(model.l):
                stray = model.transition[u][:, spc_arr != u].sum()
                if stray > STOCHASTIC_ATOL:
                    bad.append(
                        Violation(
                            "consistency",
                            f"transition[{u}]",
                            f"mass {stray:.3g} on states not tagged with control {u}",
                        )
                    )

    return ValidationReport(tuple(bad))


def transition_matrix(model: PomdpModel, u: int) -> np.ndarray:
    """Row-stochastic K x K matrix of p(x_next | x_from, u)."""
    if not 0 <= u < model.l:
        raise IndexError(f"control index {u} out of range [0, {model.l})")
    return model.transition[u]


def apply_randomizer(model: PomdpModel, w: int) -> np.ndarray:
    """Distribution of the executed control given chosen control ``w``."""
    if not 0 <= w < model.l:
        raise IndexError(f"control index {w} out of range [0, {model.l})")
    return model.randomizer[w]


def augment_autoregressive(model: PomdpModel) -> PomdpModel:
    """Fold emission history-dependence into the latent state.

    Returns an equivalent model with the standard ``{x_next}`` emission mask;
    the joint law of the observation sequence under any control sequence is
    preserved.  A model that is already standard is returned unchanged with a
    warning.
    """
    mask = model.emission_mask
    if mask == frozenset({"x_next"}):
        warnings.warn("model already has a standard emission; returning it unchanged")
        return model

    K, L, l = model.K, model.L, model.l
    if "y_prev" in mask:
        # state becomes (x, last observation); the next observation is drawn
        # jointly with the state move and then revealed deterministically
        if model.initial_obs is None:
            raise ValueError("y_prev-dependent emission requires initial_obs")
        Kp = K * L
        e = np.broadcast_to(model.emission, (K, K, L, L)) if "x_next" in mask else None
        trans = np.zeros((l, Kp, Kp))
        for u in range(l):
            for x in range(K):
                for y in range(L):
                    z = x * L + y
                    for xn in range(K):
                        if e is not None:
                            obs_law = e[xn, x, y, :]
                        else:
                            obs_law = np.broadcast_to(model.emission[0, :, :, :], (K, L, L))[
                                x, y, :
                            ]
                        trans[u, z, xn * L : (xn + 1) * L] = (
                            model.transition[u, x, xn] * obs_law
                        )
        emis = np.zeros((Kp, 1, 1, L))
        for x in range(K):
            for y in range(L):
                emis[x * L + y, 0, 0, y] = 1.0
        init = np.kron(model.initial_state, model.initial_obs)
        spc = None
        if model.state_prev_control is not None:
            spc = tuple(model.state_prev_control[z // L] for z in range(Kp))
        return PomdpModel(
            controls=model.controls,
            transition=trans,
            emission=emis,
            emission_mask=frozenset({"x_next"}),
            initial_state=init,
            randomizer=model.randomizer,
            state_prev_control=spc,
        )

    # x_prev dependence only: carry the previous state alongside the current
    Kp = K * K
    trans = np.zeros((l, Kp, Kp))
    for u in range(l):
        for x in range(K):
            for xp in range(K):
                z = x * K + xp
                trans[u, z, np.arange(K) * K + x] = model.transition[u, x, :]
    emis = np.zeros((Kp, 1, 1, L))
    e = np.broadcast_to(model.emission, (K, K, 1, L))
    for x in range(K):
        for xp in range(K):
            emis[x * K + xp, 0, 0, :] = e[x, xp, 0, :]
    # the first observation collapses x_prev onto x_0, so seed the pair state
    # on the diagonal
    init = np.zeros(Kp)
    init[np.arange(K) * K + np.arange(K)] = model.initial_state
    return PomdpModel(
        controls=model.controls,
        transition=trans,
        emission=emis,
        emission_mask=frozenset({"x_next"}),
        initial_state=init,
        randomizer=model.randomizer,
    )
