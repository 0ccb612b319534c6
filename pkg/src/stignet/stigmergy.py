"""Mark/stimulus dynamics.

A mark is a real state variable that is weakened by a fixed amount every
step and reinforced while its stimulus is active, saturating between a
floor and a ceiling. Two forms are provided:

* the exact *hard* update driven by binary stimuli, and
* a differentiable *soft* relaxation in which the update is linear in a
  real-valued stimulus and the saturation is a smooth clamp.

All functions accept scalars or numpy arrays and broadcast elementwise.
"""

from dataclasses import dataclass

import numpy as np

INF = float("inf")

DEFAULT_STEEPNESS = 8.0


def _softplus(z, k):
    # log(1 + exp(k z)) / k, overflow-safe
    return np.logaddexp(0.0, k * z) / k


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_bounds(lo, hi, steepness):
    if not steepness > 0:
        raise ValueError(f"steepness must be positive, got {steepness}")
    lo_arr, hi_arr = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    both = np.isfinite(lo_arr) & np.isfinite(hi_arr)
    if np.any(both & (lo_arr >= hi_arr)):
        raise ValueError(f"soft_clamp needs lo < hi, got lo={lo}, hi={hi}")


def soft_clamp(v, lo=-INF, hi=INF, steepness=DEFAULT_STEEPNESS):
    """Smooth, monotone approximation of ``clip(v, lo, hi)``.

    ``f(v) = v + sp(lo - v) - sp(v - hi)`` with ``sp(z) = log(1 + e^{kz})/k``.
    An infinite bound drops its term, so the two-sided form, the one-sided
    barriers and the identity (both bounds infinite) share one formula.
    The midpoint of a finite interval is a fixed point and the output lies
    strictly inside ``(lo, hi)``. As ``steepness -> inf`` it tends to the
    hard clamp, with error at most ``log(2)/steepness`` at the bounds.
    """
    _check_bounds(lo, hi, steepness)
    v = np.asarray(v, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = v.copy()
    if np.any(np.isfinite(lo)):
        out = out + np.where(np.isfinite(lo), _softplus(np.where(np.isfinite(lo), lo, 0.0) - v, steepness), 0.0)
    if np.any(np.isfinite(hi)):
        out = out - np.where(np.isfinite(hi), _softplus(v - np.where(np.isfinite(hi), hi, 0.0), steepness), 0.0)
    return out if out.ndim else float(out)


def soft_clamp_grad(v, lo=-INF, hi=INF, steepness=DEFAULT_STEEPNESS):
    """Derivative of :func:`soft_clamp` with respect to ``v``."""
    v = np.asarray(v, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = np.ones_like(v)
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    if np.any(fin_lo):
        d = d - np.where(fin_lo, _sigmoid(steepness * (np.where(fin_lo, lo, 0.0) - v)), 0.0)
    if np.any(fin_hi):
        d = d - np.where(fin_hi, _sigmoid(steepness * (v - np.where(fin_hi, hi, 0.0))), 0.0)
    return d


@dataclass
class MarkParams:
    """Parameters of one mark, or of an array of marks (fields broadcast).

    ``m0`` is the initial level, ``weaken`` the per-step decrease,
    ``reinforce`` the extra increase applied while stimulated, and
    ``floor``/``ceiling`` the saturation levels (may be infinite).
    """

    m0: object
    weaken: object = 0.0
    reinforce: object = 0.0
    floor: object = -INF
    ceiling: object = INF

    def __post_init__(self):
        lo = np.asarray(self.floor, dtype=float)
        hi = np.asarray(self.ceiling, dtype=float)
        m0 = np.asarray(self.m0, dtype=float)
        if np.any(lo > hi):
            raise ValueError("mark floor exceeds ceiling")
        if np.any(m0 < lo) or np.any(m0 > hi):
            raise ValueError("initial mark outside [floor, ceiling]")

    def validate_hard(self):
        """Sign constraints of the exact dynamics: both deltas non-negative."""
        if np.any(np.asarray(self.weaken) < 0) or np.any(np.asarray(self.reinforce) < 0):
            raise ValueError("hard-mode marks need weaken >= 0 and reinforce >= 0")
        return self


@dataclass
class MarkState:
    value: object
    t: int = 0


def hard_update(value, stimulus, weaken, reinforce, floor=-INF, ceiling=INF):
    """Array form of the exact mark update.

    Unstimulated: ``max(floor, m - weaken)``. Stimulated:
    ``min(ceiling, m - weaken + reinforce)``, additionally held at the
    floor so the mark cannot leave ``[floor, ceiling]`` when
    ``reinforce < weaken``.
    """
    stimulus = np.asarray(stimulus)
    if not np.all((stimulus == 0) | (stimulus == 1)):
        raise ValueError("hard mark update needs binary stimuli")
    value = np.asarray(value, dtype=float)
    released = np.maximum(floor, value - weaken)
    stimulated = np.minimum(ceiling, np.maximum(floor, value - weaken + reinforce))
    return np.where(stimulus == 1, stimulated, released)


def soft_update(value, stimulus, weaken, reinforce, floor=-INF, ceiling=INF,
                steepness=DEFAULT_STEEPNESS):
    """Array form of the relaxed update: a linear step, then :func:`soft_clamp`."""
    raw = np.asarray(value, dtype=float) - weaken + np.asarray(stimulus, dtype=float) * reinforce
    out = np.asarray(soft_clamp(raw, floor, ceiling, steepness))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("soft mark update produced a non-finite value")
    return out


def mark_update_hard(state, stimulus, params):
    value = hard_update(state.value, stimulus, params.weaken, params.reinforce,
                        params.floor, params.ceiling)
    return MarkState(value if value.ndim else float(value), state.t + 1)


def mark_update_soft(state, stimulus, params, steepness=DEFAULT_STEEPNESS):
    value = soft_update(state.value, stimulus, params.weaken, params.reinforce,
                        params.floor, params.ceiling, steepness)
    return MarkState(value if value.ndim else float(value), state.t + 1)


def mark_reset(params):
    m0 = np.asarray(params.m0, dtype=float)
    return MarkState(m0.copy() if m0.ndim else float(m0), 0)
