"""Static renderings: range-angle maps (PGM, ASCII, PNG) and report figures."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import dsp  # noqa: E402
from .tensor import dft_axis, fftshift_axis  # noqa: E402

# fixed metadata keeps PNG output byte-stable between runs
_PNG_META = {"Software": None}
_ASCII_RAMP = " .:-=+*#%@"

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "radarim",
}


class DegenerateMapError(ValueError):
    pass


def range_angle_power(rda, upsample: int = 1) -> np.ndarray:
    """Non-coherent sum over Doppler of an RDA map, ``[N_R, N_theta * upsample]``.

    ``upsample > 1`` zero-pads the antenna DFT for display; the network never
    sees such maps.
    """
    if upsample < 1:
        raise ValueError("upsample must be >= 1")
    rda = np.asarray(rda)
    if upsample > 1:
        rd = dsp.rda_to_rd(rda)
        n_a = rd.shape[2]
        padded = np.zeros(rd.shape[:2] + (n_a * upsample,), dtype=rd.dtype)
        padded[..., :n_a] = rd
        rda = fftshift_axis(dft_axis(padded, 2), 2)
    return np.sum(np.abs(rda.astype(np.complex128)) ** 2, axis=1)


def to_db(power: np.ndarray) -> np.ndarray:
    """Scale so that the maximum is 0 dB."""
    peak = float(np.max(power))
    if not peak > 0:
        raise DegenerateMapError("degenerate dynamic range")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(np.asarray(power) / peak)


def to_gray(db: np.ndarray, dynamic_range: float = 40.0) -> np.ndarray:
    scaled = np.clip((db + dynamic_range) / dynamic_range, 0.0, 1.0)
    return np.round(scaled * 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def ascii_preview(db: np.ndarray, rows: int = 24, cols: int = 48, dynamic_range: float = 40.0) -> str:
    h, w = db.shape
    ri = np.linspace(0, h - 1, min(rows, h)).round().astype(int)
    ci = np.linspace(0, w - 1, min(cols, w)).round().astype(int)
    sub = np.clip((db[np.ix_(ri, ci)] + dynamic_range) / dynamic_range, 0, 1)
    idx = np.minimum((sub * len(_ASCII_RAMP)).astype(int), len(_ASCII_RAMP) - 1)
    return "\n".join("".join(_ASCII_RAMP[i] for i in row) for row in idx) + "\n"


def range_angle_figure(db: np.ndarray, path, title: str = "", dynamic_range: float = 40.0) -> None:
    with plt.rc_context(STYLE):
        _range_angle_figure(db, path, title, dynamic_range)


def _range_angle_figure(db, path, title, dynamic_range):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    n_r, n_t = db.shape
    im = ax.imshow(db, origin="lower", aspect="auto", cmap="viridis", vmin=-dynamic_range, vmax=0,
                   extent=(-0.5, n_t - 0.5, -0.5, n_r - 0.5))
    ax.set_xlabel("angle bin")
    ax.set_ylabel("range bin")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def render_range_angle(rda, out_dir, stem: str, upsample: int = 8, dynamic_range: float = 40.0,
                       title: str = "") -> dict[str, Path]:
    """Write ``<stem>.pgm``, ``<stem>.txt`` (ASCII) and ``<stem>.png``."""
    db = to_db(range_angle_power(rda, upsample))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"pgm": out / f"{stem}.pgm", "ascii": out / f"{stem}.txt", "png": out / f"{stem}.png"}
    write_pgm(paths["pgm"], to_gray(db, dynamic_range))
    paths["ascii"].write_text(ascii_preview(db, dynamic_range=dynamic_range))
    range_angle_figure(db, paths["png"], title, dynamic_range)
    return paths


def metrics_figure(rows: Sequence[dict], path, title: str = "") -> None:
    """Bar chart of F1 / EVM / PPMSE per method, in report order."""
    with plt.rc_context(STYLE):
        _metrics_figure(rows, path, title)


def _metrics_figure(rows, path, title):
    names = [r["method"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), sharey=True)
    y = np.arange(len(names))
    for ax, key in zip(axes, ("F1", "EVM", "PPMSE")):
        ax.barh(y, [r[key] for r in rows], color="0.4")
        ax.set_xlabel(key)
        ax.grid(axis="x", alpha=0.3)
    axes[0].set_yticks(y)
    axes[0].set_yticklabels(names)
    axes[0].invert_yaxis()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def history_figure(history: Sequence[dict], path) -> None:
    with plt.rc_context(STYLE):
        _history_figure(history, path)


def _history_figure(history, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ep = [h["epoch"] for h in history]
    ax.semilogy(ep, [h["train_mse"] for h in history], label="train")
    ax.semilogy(ep, [h["val_mse"] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
