"""Fused adaptive integration across sample batches.

Verification campaigns evaluate the same non-polynomial integrals for
hundreds of samples on each element.  These engines run one shared level
loop over all samples' refinement trees, so the per-level numpy work is
amortized while every sample keeps its own subdivision decisions and error
budget (matching the single-sample adaptive integrators bit-for-bit up to
floating-point associativity).
"""
from __future__ import annotations

import numpy as np

from . import quadrature as quad


def _per_sample(values, sid, n):
    out = np.zeros(n)
    np.add.at(out, sid, values)
    return out


def batch_adaptive_triangles(
    values_fn,
    tris: np.ndarray,
    n_samples: int,
    rel_tol: float = quad.ADAPTIVE_RTOL,
    max_levels: int = quad.ADAPTIVE_MAX_LEVELS,
    base_exactness: int = 6,
):
    """Adaptive triangle integration of per-sample integrands.

    values_fn(points (P, 2), sample_ids (P,)) -> (P,) integrand values.
    tris (T, 3, 2) is the shared initial triangulation of the region.
    Returns (values (S,), abs_errors (S,), cap_hit (S,), levels).
    """
    rule = quad.triangle_rule(base_exactness)
    gn, gw = rule.nodes, rule.weights
    n_nodes = len(gw)
    total_area = float(quad._tri_areas(tris).sum())

    T0 = tris.shape[0]
    act_tris = np.repeat(tris[None, :, :, :], n_samples, axis=0).reshape(-1, 3, 2)
    act_sid = np.repeat(np.arange(n_samples), T0)

    def evaluate(t, sid):
        pts = (
            t[:, 0][:, None, :]
            + gn[None, :, 0, None] * (t[:, 1] - t[:, 0])[:, None, :]
            + gn[None, :, 1, None] * (t[:, 2] - t[:, 0])[:, None, :]
        )
        pid = np.repeat(sid, n_nodes)
        vals = values_fn(pts.reshape(-1, 2), pid).reshape(-1, n_nodes)
        return (vals @ gw) * (2.0 * quad._tri_areas(t))

    parent_vals = evaluate(act_tris, act_sid)
    inherited = np.full(len(act_tris), np.inf)
    accepted = np.zeros(n_samples)
    accepted_err = np.zeros(n_samples)
    cap = np.zeros(n_samples, dtype=bool)
    levels = 0
    for level in range(1, max_levels + 1):
        levels = level
        children = quad._split4(act_tris)
        csid = np.repeat(act_sid, 4)
        child_vals = evaluate(children.reshape(-1, 3, 2), csid)
        child_sum = child_vals.reshape(-1, 4).sum(axis=1)
        err = np.maximum(np.abs(parent_vals - child_sum), inherited / 4.0)
        est = accepted + _per_sample(child_sum, act_sid, n_samples)
        budget = rel_tol * np.maximum(np.abs(est), 1e-300)
        n_active = np.bincount(act_sid, minlength=n_samples).astype(float)
        share = (
            budget[act_sid] * quad._tri_areas(act_tris) / total_area
            + budget[act_sid] / (4.0 * max_levels * n_active[act_sid])
        )
        done = err <= share
        accepted += _per_sample(child_sum[done], act_sid[done], n_samples)
        accepted_err += _per_sample(err[done], act_sid[done], n_samples)
        if bool(done.all()):
            return accepted, accepted_err, cap, levels
        keep = ~done
        kept_sid, kept_err = act_sid[keep], err[keep]
        act_tris = children[keep].reshape(-1, 3, 2)
        act_sid = np.repeat(kept_sid, 4)
        parent_vals = child_vals.reshape(-1, 4)[keep].ravel()
        inherited = np.repeat(kept_err, 4)
    # depth cap: keep finest estimates, carry the last parent errors
    accepted += _per_sample(parent_vals, act_sid, n_samples)
    accepted_err += _per_sample(kept_err, kept_sid, n_samples)
    cap[np.unique(kept_sid)] = True
    return accepted, accepted_err, cap, levels


def batch_adaptive_segments(
    g_fn,
    n_samples: int,
    rel_tol: float = quad.ADAPTIVE_RTOL,
    max_levels: int = 2 * quad.ADAPTIVE_MAX_LEVELS,
    base_exactness: int = 14,
):
    """Adaptive [0, 1] integration of per-sample outer integrands.

    g_fn(w (P,), sample_ids (P,)) -> (P,) values.  Returns the same tuple
    layout as batch_adaptive_triangles.
    """
    rule = quad.segment_rule(base_exactness)
    gn, gw = rule.nodes, rule.weights
    n_nodes = len(gw)

    lo = np.zeros(n_samples)
    hi = np.ones(n_samples)
    sid = np.arange(n_samples)

    def evaluate(l, h, s):
        w = l[:, None] + gn[None, :] * (h - l)[:, None]
        vals = g_fn(w.ravel(), np.repeat(s, n_nodes)).reshape(-1, n_nodes)
        return (vals @ gw) * (h - l)

    parent_vals = evaluate(lo, hi, sid)
    inherited = np.full(lo.size, np.inf)
    accepted = np.zeros(n_samples)
    accepted_err = np.zeros(n_samples)
    cap = np.zeros(n_samples, dtype=bool)
    levels = 0
    for level in range(1, max_levels + 1):
        levels = level
        mid = 0.5 * (lo + hi)
        l2 = np.concatenate([lo, mid])
        h2 = np.concatenate([mid, hi])
        s2 = np.concatenate([sid, sid])
        child_vals = evaluate(l2, h2, s2)
        child_sum = child_vals[: lo.size] + child_vals[lo.size:]
        err = np.maximum(np.abs(parent_vals - child_sum), inherited / 4.0)
        est = accepted + _per_sample(child_sum, sid, n_samples)
        budget = rel_tol * np.maximum(np.abs(est), 1e-300)
        n_active = np.bincount(sid, minlength=n_samples).astype(float)
        share = budget[sid] * (hi - lo) + budget[sid] / (4.0 * max_levels * n_active[sid])
        done = err <= share
        accepted += _per_sample(child_sum[done], sid[done], n_samples)
        accepted_err += _per_sample(err[done], sid[done], n_samples)
        if bool(done.all()):
            return accepted, accepted_err, cap, levels
        keep = ~done
        kept_sid, kept_err = sid[keep], err[keep]
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        sid = np.concatenate([sid[keep], sid[keep]])
        parent_vals = np.concatenate(
            [child_vals[: done.size][keep], child_vals[done.size:][keep]]
        )
        inherited = np.concatenate([kept_err, kept_err])
    accepted += _per_sample(parent_vals, sid, n_samples)
    accepted_err += _per_sample(kept_err, kept_sid, n_samples)
    cap[np.unique(sid)] = True
    return accepted, accepted_err, cap, levels
