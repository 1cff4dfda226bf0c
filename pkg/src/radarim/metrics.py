"""CA-CFAR detection, peak extraction and the F1 / EVM / PPMSE metrics."""
from __future__ import annotations

import dataclasses
import json
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from . import dsp

Peak = tuple[int, int]


@dataclasses.dataclass(frozen=True)
class CfarConfig:
    guard: int = 2
    train: int = 8
    pfa: float = 1e-3

    def __post_init__(self):
        if self.train < 1:
            raise ValueError("CFAR needs at least one training cell per axis")
        if self.guard < 0:
            raise ValueError("guard cells must be non-negative")
        if not 0.0 < self.pfa < 1.0:
            raise ValueError("pfa must lie in (0, 1)")


@dataclasses.dataclass
class DetectionReport:
    detections: np.ndarray
    peaks: list[Peak]
    n_tp: int
    n_fp: int
    n_fn: int
    f1: float
    evm: float
    ppmse: float

    def to_dict(self) -> dict:
        return {
            "peaks": [list(p) for p in self.peaks],
            "n_tp": self.n_tp,
            "n_fp": self.n_fp,
            "n_fn": self.n_fn,
            "f1": self.f1,
            "evm": self.evm,
            "ppmse": self.ppmse,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def cfar_alpha(n_train: int, pfa: float) -> float:
    """CA-CFAR threshold factor for exponentially distributed cell powers."""
    return n_train * (pfa ** (-1.0 / n_train) - 1.0)


def _box_sum(x: np.ndarray, half: int) -> np.ndarray:
    size = 2 * half + 1
    # uniform_filter averages; wrap mode matches the circular DFT axes
    return ndimage.uniform_filter(x, size=size, mode="wrap") * size**2


def cacfar(power_map, cfg: CfarConfig = CfarConfig()) -> np.ndarray:
    """Two-dimensional cell-averaging CFAR with circular edge handling.

    The training region is the ``(2(g+t)+1)**2`` square around the cell under
    test minus the ``(2g+1)**2`` guard square.
    """
    p = np.asarray(power_map, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("power map must be rank 2")
    outer = cfg.guard + cfg.train
    if 2 * outer + 1 > min(p.shape):
        raise ValueError(f"CFAR window {2 * outer + 1} larger than map {p.shape}")
    n_train = (2 * outer + 1) ** 2 - (2 * cfg.guard + 1) ** 2
    noise = (_box_sum(p, outer) - _box_sum(p, cfg.guard)) / n_train
    return p > cfar_alpha(n_train, cfg.pfa) * noise


_EIGHT = np.ones((3, 3), dtype=bool)


def extract_peaks(detections, power_map) -> list[Peak]:
    """One peak per 8-connected cluster: its strongest cell (ties -> smallest (r, d))."""
    det = np.asarray(detections, dtype=bool)
    p = np.asarray(power_map, dtype=np.float64)
    if det.shape != p.shape:
        raise ValueError("detection map and power map differ in shape")
    labels, count = ndimage.label(det, structure=_EIGHT)
    peaks = []
    for idx, region in enumerate(ndimage.find_objects(labels), start=1):
        sub = (labels[region] == idx)
        vals = np.where(sub, p[region], -np.inf)
        # argmax returns the first maximum in row-major order: the lexicographic tie-break
        r, d = np.unravel_index(np.argmax(vals), vals.shape)
        peaks.append((int(r + region[0].start), int(d + region[1].start)))
    return sorted(peaks)


def detect(rd, cfg: CfarConfig = CfarConfig()) -> tuple[np.ndarray, list[Peak]]:
    """Detection path for an (unwindowed) RD or RDA map: window, sum, CFAR, peaks."""
    power = dsp.detection_map(rd)
    det = cacfar(power, cfg)
    return det, extract_peaks(det, power)


def match_peaks(pred: Sequence[Peak], truth: Sequence[Peak], tol: int = 1) -> int:
    """Size of a maximum one-to-one matching within Chebyshev distance ``tol``."""
    if not pred or not truth:
        return 0
    a = np.asarray(pred)[:, None, :]
    b = np.asarray(truth)[None, :, :]
    close = np.max(np.abs(a - b), axis=-1) <= tol
    rows, cols = linear_sum_assignment(~close)
    return int(np.sum(close[rows, cols]))


def f1_from_counts(n_tp: int, n_fp: int, n_fn: int) -> float:
    denom = n_tp + 0.5 * (n_fp + n_fn)
    if denom == 0:
        return 1.0
    return n_tp / denom


def f1_score(pred: Sequence[Peak], truth: Sequence[Peak], tol: int = 1) -> tuple[float, int, int, int]:
    """Return ``(f1, n_tp, n_fp, n_fn)``."""
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    pred = [tuple(p) for p in pred]
    truth = [tuple(t) for t in truth]
    tp = match_peaks(pred, truth, tol)
    fp = len(pred) - tp
    fn = len(truth) - tp
    return f1_from_counts(tp, fp, fn), tp, fp, fn


def _at_peaks(pred_rd, clean_rd, peaks: Iterable[Peak]):
    pred = np.asarray(pred_rd)
    clean = np.asarray(clean_rd)
    if pred.shape != clean.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {clean.shape}")
    peaks = list(peaks)
    if not peaks:
        raise ValueError("peak set is empty")
    r, d = np.asarray(peaks).T
    s = clean[r, d, :].astype(np.complex128)
    s_hat = pred[r, d, :].astype(np.complex128)
    if np.any(np.abs(s) == 0):
        raise ValueError("ground truth has zero magnitude at a peak")
    return s_hat, s


def evm(pred_rd, clean_rd, peaks: Iterable[Peak]) -> float:
    s_hat, s = _at_peaks(pred_rd, clean_rd, peaks)
    return float(np.mean(np.abs(s - s_hat) / np.abs(s)))


def ppmse(pred_rd, clean_rd, peaks: Iterable[Peak]) -> float:
    s_hat, s = _at_peaks(pred_rd, clean_rd, peaks)
    delta = np.abs(np.angle(s_hat) - np.angle(s))
    return float(np.mean(np.minimum(delta, 2 * np.pi - delta) ** 2))


def evaluate_sample(truth_peaks, clean_rda, output, kind: str = "rda",
                    cfg: CfarConfig = CfarConfig(), tol: int = 1) -> DetectionReport:
    """Score a mitigated map against its clean reference.

    ``output`` is an RDA map (``kind='rda'``) or a multi-antenna RD map
    (``kind='rd'``); RDA inputs are brought back to RD before the EVM and
    PPMSE, both of which are defined per antenna.
    """
    if kind == "rda":
        pred_rd = dsp.rda_to_rd(output)
    elif kind == "rd":
        pred_rd = np.asarray(output)
    else:
        raise ValueError(f"unknown map kind {kind!r}")
    clean_rd = dsp.rda_to_rd(clean_rda)
    det, peaks = detect(pred_rd, cfg)
    f1, tp, fp, fn = f1_score(peaks, truth_peaks, tol)
    return DetectionReport(
        detections=det,
        peaks=peaks,
        n_tp=tp,
        n_fp=fp,
        n_fn=fn,
        f1=f1,
        evm=evm(pred_rd, clean_rd, truth_peaks),
        ppmse=ppmse(pred_rd, clean_rd, truth_peaks),
    )
