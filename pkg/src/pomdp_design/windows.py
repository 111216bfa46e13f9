"""Encoded history windows and the batched tensors built over them.

A window at lag m holds the last min(m, t)+1 observations and the executed
controls between them, oldest first.  Windows are encoded in mixed radix:

    idx = obsPart * l**n_ctrl + ctrlPart
    obsPart  = sum_i obs[i]  * L**i   (obs[0] the oldest)
    ctrlPart = sum_j ctrl[j] * l**j   (ctrl[0] the oldest)

Models whose augmented state embeds the previously executed control carry
one extra leading control per window (the "pin"): it fixes the control
component of the window-start prior, so full windows then hold m+1 controls
instead of m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ImpossibleWindowError
from .inference import HistoryWindow, fd_points, squared_score_from_probs, window_predictive
from .model import PROB_FLOOR, ModelFamily, PomdpModel


def encode_window(obs: Sequence[int], ctrl: Sequence[int], L: int, l: int) -> int:
    obs_part = 0
    for i, y in enumerate(obs):
        obs_part += int(y) * L**i
    ctrl_part = 0
    for j, u in enumerate(ctrl):
        ctrl_part += int(u) * l**j
    return obs_part * l ** len(ctrl) + ctrl_part


def decode_window(idx: int, L: int, l: int, n_obs: int, n_ctrl: int) -> HistoryWindow:
    ctrl_part = idx % l**n_ctrl
    obs_part = idx // l**n_ctrl
    obs = []
    for _ in range(n_obs):
        obs.append(obs_part % L)
        obs_part //= L
    ctrl = []
    for _ in range(n_ctrl):
        ctrl.append(ctrl_part % l)
        ctrl_part //= l
    return HistoryWindow(tuple(obs), tuple(ctrl))


def window_shape(t: int, m: int, ctrl_in_state: bool):
    """(n_obs, n_ctrl) of the window used at time t."""
    n_obs = min(m, t) + 1
    n_ctrl = min(m + (1 if ctrl_in_state else 0), t)
    return n_obs, n_ctrl


def window_count(L: int, l: int, n_obs: int, n_ctrl: int) -> int:
    return L**n_obs * l**n_ctrl


def shift_indices(L: int, l: int, shape_from, shape_to) -> np.ndarray:
    """Index array S[z, u, y'] of the successor window after (u, y').

    Appending keeps oldest-first digits least significant, so growing a
    component appends a high digit while a full component drops its lowest
    digit and shifts down.
    """
    n_obs, n_ctrl = shape_from
    n_obs2, n_ctrl2 = shape_to
    if n_obs2 not in (n_obs, n_obs + 1) or n_ctrl2 not in (n_ctrl, n_ctrl + 1):
        raise ValueError(f"cannot shift window shape {shape_from} to {shape_to}")
    W = window_count(L, l, n_obs, n_ctrl)
    idx = np.arange(W)
    obs_part = idx // l**n_ctrl
    ctrl_part = idx % l**n_ctrl
    y = np.arange(L)
    u = np.arange(l)
    if n_obs2 == n_obs + 1:
        obs_new = obs_part[:, None] + y[None, :] * L**n_obs  # (W, L)
    else:
        obs_new = obs_part[:, None] // L + y[None, :] * L ** (n_obs - 1)
    if n_ctrl2 == n_ctrl + 1:
        ctrl_new = ctrl_part[:, None] + u[None, :] * l**n_ctrl  # (W, l)
    else:
        ctrl_new = ctrl_part[:, None] // l + u[None, :] * l ** (n_ctrl - 1)
    out = obs_new[:, None, :] * l**n_ctrl2 + ctrl_new[:, :, None]  # (W, l, L)
    return np.ascontiguousarray(out)


@dataclass
class WindowSpace:
    """Predictive and squared-score tensors over every window of one shape.

    P[z, u, y'] is the predictive probability of observing y' after executing
    u from window z; C[z, u, y'] the squared finite-difference log-score of
    that probability in the family parameter.  Rows of windows that carry no
    probability mass are zero.
    """

    n_obs: int
    n_ctrl: int
    L: int
    l: int
    P: np.ndarray
    C: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return self.P.shape[0]


def window_beliefs(model: PomdpModel, n_obs: int, n_ctrl: int, nu=None):
    """(W, K) filtered beliefs at the end of every window, plus a validity mask.

    Rows are ordered by the window encoding.  Windows that are impossible
    under the model get a zero row and ``valid`` False.
    """
    if n_ctrl not in (n_obs - 1, n_obs):
        raise ValueError("window control count must be n_obs-1 or n_obs")
    if model.has_standard_emission:
        return _window_beliefs_std(model, n_obs, n_ctrl, nu)
    return _window_beliefs_loop(model, n_obs, n_ctrl, nu)


def _window_beliefs_std(model: PomdpModel, n_obs: int, n_ctrl: int, nu):
    from .inference import start_belief  # local import to avoid cycle at module load

    K, L, l = model.K, model.L, model.l
    nu = model.initial_state if nu is None else np.asarray(nu, float)
    pinned = n_ctrl == n_obs
    E = model.emission_std()  # (K, L)

    if pinned:
        spc = np.array(model.state_prev_control)
        base = np.where(spc[None, :] == np.arange(l)[:, None], nu[None, :], 0.0)  # (l, K)
        B = base[:, None, :] * E.T[None, :, :]  # (pin, o0, K)
        axes = ["c-1", "o0"]
    else:
        B = (nu[None, :] * E.T)[None, ...][0]  # (o0, K)
        axes = ["o0"]

    mass = B.sum(axis=-1)
    denom = np.where(mass > PROB_FLOOR, mass, 1.0)
    B = B / denom[..., None]
    valid = mass > PROB_FLOOR

    T = model.transition  # (l, K, K)
    for step in range(n_obs - 1):
        BT = np.einsum("...k,ukx->...ukx", B, T).sum(axis=-2)  # (..., u, K)
        joint = BT[..., None] * E[None, ..., :, :] if False else BT[..., :, None] * E
        # joint axes: (..., u, x_next, y')
        pred = joint.sum(axis=-2)  # (..., u, y')
        ok = pred > PROB_FLOOR
        denom = np.where(ok, pred, 1.0)
        B = np.moveaxis(joint, -2, -1) / denom[..., None]  # (..., u, y', K)
        valid = valid[..., None, None] & ok
        axes += [f"c{step}", f"o{step + 1}"]

    # reorder chronological axes into encoding order: obs newest->oldest,
    # then ctrl newest->oldest (the encoding's fastest digit is the oldest)
    order = [f"o{i}" for i in range(n_obs - 1, -1, -1)]
    order += [f"c{j}" for j in range(n_obs - 2, -2 if pinned else -1, -1)]
    perm = [axes.index(a) for a in order]
    B = np.transpose(B, perm + [len(axes)]).reshape(-1, K)
    valid = np.transpose(valid, perm).reshape(-1)
    B = np.where(valid[:, None], B, 0.0)
    return np.ascontiguousarray(B), valid


def _window_beliefs_loop(model: PomdpModel, n_obs: int, n_ctrl: int, nu):
    from .inference import filter_step, start_belief
    from .model import BeliefState

    K, L, l = model.K, model.L, model.l
    W = window_count(L, l, n_obs, n_ctrl)
    B = np.zeros((W, K))
    valid = np.zeros(W, dtype=bool)
    for z in range(W):
        w = decode_window(z, L, l, n_obs, n_ctrl)
        try:
            b = start_belief(model, w.obs[0], nu, w.pin_control())
            for i, u in enumerate(w.step_controls()):
                bs, _ = filter_step(model, BeliefState(b), u, w.obs[i + 1], w.obs[i])
                b = bs.weights
        except (ImpossibleWindowError, Exception) as exc:
            if not isinstance(exc, ImpossibleWindowError) and not isinstance(
                exc, __import__("pomdp_design.errors", fromlist=["x"]).ImpossibleObservationError
            ):
                raise
            continue
        B[z] = b
        valid[z] = True
    return B, valid


def predictive_tensor(model: PomdpModel, beliefs: np.ndarray, obs_last=None) -> np.ndarray:
    """P[z, u, y'] for each window belief row; (W, l, L)."""
    K, L, l = model.K, model.L, model.l
    if model.has_standard_emission:
        M = model.transition @ model.emission_std()  # (l, K, L)
        return np.einsum("zk,ukl->zul", beliefs, M)
    # history-dependent kernels need the last observation of each window
    W = beliefs.shape[0]
    out = np.zeros((W, l, L))
    e = np.broadcast_to(model.emission, (K, K, model.emission.shape[2], L))
    for z in range(W):
        y_last = obs_last[z]
        e3 = e[:, :, y_last if "y_prev" in model.emission_mask else 0, :]
        push = beliefs[z][:, None] * model.transition  # (u, x, x') via broadcasting
        out[z] = np.einsum("uij,jik->uk", beliefs[z][None, :, None] * model.transition, e3)
    return out


def build_space(model: PomdpModel, n_obs: int, n_ctrl: int, nu=None) -> WindowSpace:
    """Window space with predictives only (no scores)."""
    B, valid = window_beliefs(model, n_obs, n_ctrl, nu)
    obs_last = None
    if not model.has_standard_emission:
        W = window_count(model.L, model.l, n_obs, n_ctrl)
        obs_last = [
            decode_window(z, model.L, model.l, n_obs, n_ctrl).obs[-1] for z in range(W)
        ]
    P = predictive_tensor(model, B, obs_last)
    P = np.where(valid[:, None, None], P, 0.0)
    return WindowSpace(n_obs, n_ctrl, model.L, model.l, P, None, valid)


def scored_space(
    family: ModelFamily,
    theta: float,
    n_obs: int,
    n_ctrl: int,
    nu=None,
    h: Optional[float] = None,
) -> WindowSpace:
    """Window space with both predictives at theta and squared score tensors.

    Scores are central finite differences of the log predictive in theta
    (one-sided at the domain edges), with floor-dead entries scored zero.
    """
    t_lo, t_hi, gap = fd_points(family, theta, h)
    space = build_space(family(theta), n_obs, n_ctrl, nu)
    lo = build_space(family(t_lo), n_obs, n_ctrl, nu) if t_lo != theta else space
    hi = build_space(family(t_hi), n_obs, n_ctrl, nu) if t_hi != theta else space
    space.C = squared_score_from_probs(lo.P, hi.P, gap)
    space.C = np.where(space.valid[:, None, None], space.C, 0.0)
    return space
