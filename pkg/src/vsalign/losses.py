"""Saliency training losses and evaluation metrics.

Losses accept a single map (H×W) or a stack of maps (F×H×W, or F×1×H×W);
each term is computed per map over the last two axes and averaged over maps.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

EPS = 1e-8
_SPATIAL = (-2, -1)


class DegenerateMapError(ValueError):
    """A map is constant, empty, or has no fixations where some are required."""


def _maps(x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ValueError(f"expected single-channel maps, got {x.shape}")
        x = T.reshape(x, (x.shape[0],) + x.shape[2:])
    if x.ndim not in (2, 3):
        raise ValueError(f"expected H×W or F×H×W maps, got shape {x.shape}")
    return x


def _like(x, ref: Tensor) -> Tensor:
    x = _maps(x if isinstance(x, Tensor) else np.asarray(x, dtype=ref.dtype))
    if x.shape != ref.shape:
        raise ValueError(f"map shapes differ: {ref.shape} vs {x.shape}")
    return x


def _check_spread(x: Tensor, what: str) -> None:
    sd = x.data.std(axis=_SPATIAL)
    if np.any(sd <= EPS):
        raise DegenerateMapError(f"{what} is constant (std <= {EPS})")


def _unit_sum(x: Tensor, what: str) -> Tensor:
    s = T.sum(x, axis=_SPATIAL, keepdims=True)
    if np.any(s.data <= 0):
        raise DegenerateMapError(f"{what} has non-positive sum")
    return x / s


def loss_nss(pred, fixations) -> Tensor:
    """Negative mean z-scored prediction at fixated pixels."""
    p = _maps(pred)
    q = _like(fixations, p)
    counts = q.data.sum(axis=_SPATIAL)
    if np.any(counts <= 0):
        raise DegenerateMapError("fixation map has no positive pixel")
    _check_spread(p, "prediction")
    z = (p - T.mean(p, _SPATIAL, keepdims=True)) / T.std(p, _SPATIAL, keepdims=True)
    per_map = T.sum(z * q, axis=_SPATIAL) / counts.astype(p.dtype)
    return -T.mean(per_map)


def loss_sim(pred, gt) -> Tensor:
    """Negative histogram intersection of the unit-sum maps, in [-1, 0]."""
    p = _maps(pred)
    g = _like(gt, p)
    per_map = T.sum(T.minimum(_unit_sum(p, "prediction"), _unit_sum(g, "ground truth")), axis=_SPATIAL)
    return -T.mean(per_map)


def loss_cc(pred, gt) -> Tensor:
    """Negative Pearson correlation, population statistics."""
    p = _maps(pred)
    g = _like(gt, p)
    _check_spread(p, "prediction")
    _check_spread(g, "ground truth")
    per_map = T.cov(p, g, _SPATIAL) / (T.std(p, _SPATIAL) * T.std(g, _SPATIAL))
    return -T.mean(per_map)


def loss_kl(pred, gt) -> Tensor:
    """KL(G || P) of the unit-sum maps with EPS smoothing."""
    p = _maps(pred)
    g = _like(gt, p)
    pn = _unit_sum(p, "prediction")
    gn = _unit_sum(g, "ground truth")
    per_map = T.sum(gn * T.log((gn + EPS) / (pn + EPS)), axis=_SPATIAL)
    return T.mean(per_map)


def loss_terms(pred, fixations, gt, nss_frames=None) -> dict[str, Tensor]:
    """The four terms; ``nss_frames`` restricts NSS to frames that have fixations."""
    p = _maps(pred)
    if nss_frames is None:
        nss = loss_nss(p, fixations)
    else:
        q = _like(fixations, p)
        nss = loss_nss(T.take(p, nss_frames), q.data[np.asarray(nss_frames)])
    return {"nss": nss, "sim": loss_sim(p, gt), "cc": loss_cc(p, gt), "kl": loss_kl(p, gt)}


def loss_total(pred, fixations, gt, nss_frames=None) -> Tensor:
    """Unweighted sum of the NSS, SIM, CC and KL terms."""
    terms = loss_terms(pred, fixations, gt, nss_frames)
    return terms["nss"] + terms["sim"] + terms["cc"] + terms["kl"]


# ---------------------------------------------------------------------------
# evaluation metrics (plain floats, higher is better except KL)


def _as_map(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def metric_nss(pred, fixations) -> float:
    return -loss_nss(_as_map(pred), _as_map(fixations)).item()


def metric_sim(pred, gt) -> float:
    return -loss_sim(_as_map(pred), _as_map(gt)).item()


def metric_cc(pred, gt) -> float:
    return -loss_cc(_as_map(pred), _as_map(gt)).item()


def metric_kl(pred, gt) -> float:
    return loss_kl(_as_map(pred), _as_map(gt)).item()


def roc_area(positives: np.ndarray, negatives: np.ndarray) -> float:
    """Exact area under the ROC curve swept at the positive scores.

    For every positive score used as a threshold, the fraction of negatives
    strictly below it is accumulated; ties count one half.
    """
    pos = np.asarray(positives, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(negatives, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise DegenerateMapError("ROC area needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    return float(np.sum(below + 0.5 * (not_above - below)) / (pos.size * neg.size))


def metric_auc_j(pred, fixations) -> float:
    """Judd AUC: fixated pixels are positives, every other pixel a negative."""
    p = _as_map(pred)
    q = _as_map(fixations) > 0
    if p.shape != q.shape:
        raise ValueError(f"map shapes differ: {p.shape} vs {q.shape}")
    if not q.any() or q.all():
        raise DegenerateMapError("fixation map needs at least one fixated and one free pixel")
    return roc_area(p[q], p[~q])


def metric_sauc(pred, fixations, shuffle_fixations) -> float:
    """Shuffled AUC: negatives are other frames' fixations not fixated here."""
    p = _as_map(pred)
    q = _as_map(fixations) > 0
    s = _as_map(shuffle_fixations) > 0
    if not (p.shape == q.shape == s.shape):
        raise ValueError("prediction, fixation and shuffle maps must share a shape")
    if not q.any():
        raise DegenerateMapError("fixation map is empty")
    neg = s & ~q
    if not neg.any():
        raise DegenerateMapError("shuffled fixations leave no negative pixel")
    return roc_area(p[q], p[neg])
