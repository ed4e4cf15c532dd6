"""Contrastive losses, semi-hard negative mining, and the sign layer.

The pairwise contrastive loss operates on a batch of 2N embeddings laid
out as N adjacent augmentation pairs (rows 2i and 2i+1 belong to patch i).
Per pair the loss is

    l_i = -log( 2 exp(sim(z_a, z_b)/tau) / sum_{j != i} sum_{m,n} exp(sim/tau) )

with sim = cosine similarity: the numerator carries a factor 2 and the
denominator sums all four cross-pair combinations while excluding every
same-pair term. Note this differs from the more common formulation that
normalizes per anchor; with all pairs identical the loss is log 2 per pair
(not 0), and the loss can go negative. Cosine similarity is computed on
the raw inputs (normalizing internally), so gradients are exact even for
non-unit inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation

_EPS = 1e-12


def sign_layer_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with the zero convention sgn(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def sign_layer_backward(dout: np.ndarray) -> np.ndarray:
    """Straight-through estimator: the upstream gradient passes unchanged."""
    return dout


def _normalize_rows(z: np.ndarray):
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), _EPS)
    return z / norms, norms


def nt_xent_loss(embeddings: np.ndarray, temperature: float):
    """Pairwise contrastive loss and its gradient w.r.t. the embeddings.

    ``embeddings`` is (2N, M) with augmentation pairs in adjacent rows.
    Returns (total loss over the N pairs, gradient array of the same shape).
    """
    if temperature <= 0:
        raise ContractViolation(f"temperature must be > 0, got {temperature}")
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 4:
        raise ContractViolation(
            f"need at least 2 augmentation pairs in an even-row batch, got shape {z.shape}"
        )
    n_pairs = z.shape[0] // 2
    u, norms = _normalize_rows(z)
    s = u @ u.T
    e = np.exp(s / temperature)

    a_idx = np.arange(0, 2 * n_pairs, 2)
    b_idx = a_idx + 1
    row_sums = e.sum(axis=1)
    own_block = (
        e[a_idx, a_idx] + e[a_idx, b_idx] + e[b_idx, a_idx] + e[b_idx, b_idx]
    )
    den = row_sums[a_idx] + row_sums[b_idx] - own_block
    pos = s[a_idx, b_idx]
    loss = float(np.sum(-np.log(2.0) - pos / temperature + np.log(den)))

    # dL/dS: denominator terms E[r,c]/(tau*den_i) for rows of pair i and
    # columns outside the pair; numerator contributes -1/tau at (a, b)
    den_per_row = np.repeat(den, 2)
    g = e / (temperature * den_per_row[:, None])
    for i in range(n_pairs):
        a, b = 2 * i, 2 * i + 1
        g[a, a] = g[a, b] = g[b, a] = g[b, b] = 0.0
    g[a_idx, b_idx] -= 1.0 / temperature
    du = (g + g.T) @ u
    dz = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms
    return loss, dz


def triplet_margin_loss(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                        margin: float):
    """Hinge on squared distances: max(0, d(a,p)^2 - d(a,n)^2 + margin).

    Returns (loss, (grad_anchor, grad_positive, grad_negative)).
    """
    if margin <= 0:
        raise ContractViolation(f"margin must be > 0, got {margin}")
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    d_ap = float(np.sum((a - p) ** 2))
    d_an = float(np.sum((a - n) ** 2))
    val = d_ap - d_an + margin
    if val <= 0:
        zero = np.zeros_like(a)
        return 0.0, (zero, zero.copy(), zero.copy())
    return val, (2.0 * (n - p), -2.0 * (a - p), 2.0 * (a - n))


def semi_hard_negatives(embeddings: np.ndarray, margin: float) -> np.ndarray:
    """Pick one negative row per pair by the classic semi-hard rule.

    For pair i the anchor is row 2i and the positive row 2i+1; candidates
    are all rows of other pairs. Preferred: the hardest candidate inside
    the semi-hard window (d_ap^2, d_ap^2 + margin). Fallback: the hardest
    candidate still farther than the positive. If every candidate is closer
    than the positive the triplet is skipped (entry -1).
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 4:
        raise ContractViolation(
            f"need at least 2 augmentation pairs in an even-row batch, got shape {z.shape}"
        )
    n_pairs = z.shape[0] // 2
    chosen = np.full(n_pairs, -1, dtype=np.int64)
    sq = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
    for i in range(n_pairs):
        a, b = 2 * i, 2 * i + 1
        d_ap = sq[a, b]
        cand = [j for j in range(z.shape[0]) if j // 2 != i]
        dists = sq[a, cand]
        in_window = [
            (dist, j) for dist, j in zip(dists, cand) if d_ap < dist < d_ap + margin
        ]
        if in_window:
            chosen[i] = min(in_window)[1]
            continue
        beyond = [(dist, j) for dist, j in zip(dists, cand) if dist > d_ap]
        if beyond:
            chosen[i] = min(beyond)[1]
    return chosen


def triplet_batch_loss(embeddings: np.ndarray, margin: float):
    """Total semi-hard triplet loss over a paired batch, with gradients.

    Triplets whose pairs have no usable negative are skipped; returns
    (loss summed over used triplets, dZ, number of triplets used).
    """
    z = np.asarray(embeddings, dtype=np.float64)
    negatives = semi_hard_negatives(z, margin)
    dz = np.zeros_like(z)
    total = 0.0
    used = 0
    for i, neg in enumerate(negatives):
        if neg < 0:
            continue
        a, b = 2 * i, 2 * i + 1
        val, (da, dp, dn) = triplet_margin_loss(z[a], z[b], z[neg], margin)
        total += val
        dz[a] += da
        dz[b] += dp
        dz[neg] += dn
        used += 1
    return total, dz, used
