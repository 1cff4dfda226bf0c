"""Synthetic FMCW data: point-target scenes, crossing-chirp interference, datasets.

The ego radar transmits back-to-back linear up-chirps of duration ``T_sw``
centred on ``f_c``.  Objects are ideal point scatterers (no range migration).
An interferer is a train of linear chirps; after dechirping its signal only
survives the receiver low-pass while the instantaneous frequency difference
to the ego chirp is below ``f_s / 2``, which produces the short bursts that
the mitigation methods have to deal with.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import shutil
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dsp, metrics
from .tensor import DTYPE, save_tensor

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
GENERATOR_VERSION = "radarim-sim/1"

# sampling ranges for interferers
SWEEP_DURATION = (12e-6, 24e-6)
BANDWIDTH = (0.15e9, 0.25e9)
AOA = (-90.0, 90.0)
START_FREQ = (78.9e9, 79.1e9)
N_SWEEPS = (100, 156)
SNIR_DB = (30.0, 50.0)
N_INTERFERERS = (1, 3)

MAX_OBJECTS = 10
AMPLITUDE_SPAN_DB = 30.0


@dataclasses.dataclass(frozen=True)
class RadarConfig:
    n_range: int = 96
    n_doppler: int = 96
    n_antennas: int = 16
    carrier_freq: float = 79e9
    bandwidth: float = 0.2e9
    sweep_duration: float = 16e-6
    antenna_spacing: float = 0.5
    noise_floor_db: float = -20.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name != "noise_floor_db" and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")

    @property
    def sample_rate(self) -> float:
        return self.n_range / self.sweep_duration

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_range, self.n_doppler, self.n_antennas)

    @property
    def chirp_slope(self) -> float:
        return self.bandwidth / self.sweep_duration

    @property
    def max_range(self) -> float:
        """Range whose beat frequency reaches ``f_s / 2``."""
        return SPEED_OF_LIGHT * self.sample_rate * self.sweep_duration / (4 * self.bandwidth)

    @property
    def max_velocity(self) -> float:
        """Half the Doppler span, i.e. ``|f_D| < 1 / (2 T_sw)``."""
        return SPEED_OF_LIGHT / (4 * self.carrier_freq * self.sweep_duration)

    def range_bin(self, rng: float) -> float:
        return 2 * self.bandwidth * rng / SPEED_OF_LIGHT

    def doppler_bin(self, velocity: float) -> float:
        return 2 * velocity * self.carrier_freq / SPEED_OF_LIGHT * self.n_doppler * self.sweep_duration

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class RadarObject:
    range: float
    velocity: float
    azimuth: float
    amplitude: float


@dataclasses.dataclass(frozen=True)
class Scene:
    objects: tuple[RadarObject, ...]

    def to_dict(self) -> dict:
        return {"objects": [dataclasses.asdict(o) for o in self.objects]}


@dataclasses.dataclass(frozen=True)
class InterfererConfig:
    sweep_duration: float
    bandwidth: float
    start_freq: float
    aoa: float
    n_sweeps: int
    snir_db: float
    time_offset: float = 0.0
    chirp_slope_sign: int = 1
    phase: float = 0.0

    @property
    def slope(self) -> float:
        return self.chirp_slope_sign * self.bandwidth / self.sweep_duration

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def sample_scene(rng_seed: int, cfg: RadarConfig = RadarConfig()) -> Scene:
    rng = _rng(rng_seed, 0)
    count = int(rng.integers(1, MAX_OBJECTS + 1))
    r_hi = 0.9 * cfg.max_range
    v_max = cfg.max_velocity
    objs = []
    for _ in range(count):
        objs.append(RadarObject(
            range=float(rng.uniform(2.0, r_hi)),
            velocity=float(rng.uniform(-v_max, v_max)),
            azimuth=float(rng.uniform(-90.0, 90.0)),
            amplitude=float(10 ** (-rng.uniform(0.0, AMPLITUDE_SPAN_DB) / 20)),
        ))
    return Scene(tuple(objs))


def _noise(rng: np.random.Generator, cfg: RadarConfig) -> np.ndarray:
    power = 10 ** (cfg.noise_floor_db / 10)
    z = rng.standard_normal(cfg.shape + (2,)) * math.sqrt(power / 2)
    return z[..., 0] + 1j * z[..., 1]


def synthesize_clean(scene: Scene, cfg: RadarConfig = RadarConfig(),
                     noise_seed: Optional[int] = None) -> np.ndarray:
    """Beat-signal cube ``[N_R, N_D, N_A]`` of the scene plus complex AWGN.

    Noise is drawn from ``noise_seed`` (``None`` gives a noiseless cube).
    """
    if not scene.objects:
        raise ValueError("scene has no objects")
    n = np.arange(cfg.n_range)[:, None, None] / cfg.sample_rate
    m = np.arange(cfg.n_doppler)[None, :, None] * cfg.sweep_duration
    a = np.arange(cfg.n_antennas)[None, None, :]
    cube = np.zeros(cfg.shape, dtype=np.complex128)
    for obj in scene.objects:
        f_b = 2 * cfg.bandwidth * obj.range / (SPEED_OF_LIGHT * cfg.sweep_duration)
        f_d = 2 * obj.velocity * cfg.carrier_freq / SPEED_OF_LIGHT
        spatial = cfg.antenna_spacing * np.sin(np.deg2rad(obj.azimuth))
        cube += obj.amplitude * np.exp(2j * np.pi * (f_b * n + f_d * m + spatial * a))
    if noise_seed is not None:
        cube += _noise(_rng(noise_seed, 2), cfg)
    return cube.astype(DTYPE)


def sample_interferers(rng_seed: int, fixed_aoa: Optional[float] = None,
                       cfg: RadarConfig = RadarConfig()) -> list[InterfererConfig]:
    """Draw 1-3 interferers from the training-data parameter ranges."""
    rng = _rng(rng_seed, 1)
    count = int(rng.integers(N_INTERFERERS[0], N_INTERFERERS[1] + 1))
    frame = cfg.n_doppler * cfg.sweep_duration
    out = []
    for _ in range(count):
        t_sw = float(rng.uniform(*SWEEP_DURATION))
        n_sw = int(rng.integers(N_SWEEPS[0], N_SWEEPS[1] + 1))
        aoa = float(rng.uniform(*AOA))
        out.append(InterfererConfig(
            sweep_duration=t_sw,
            bandwidth=float(rng.uniform(*BANDWIDTH)),
            start_freq=float(rng.uniform(*START_FREQ)),
            aoa=aoa if fixed_aoa is None else float(fixed_aoa),
            n_sweeps=n_sw,
            snir_db=float(rng.uniform(*SNIR_DB)),
            # the interferer's frame starts somewhere so that it overlaps the ego frame
            time_offset=float(rng.uniform(-0.5 * n_sw * t_sw, 0.5 * frame)),
            chirp_slope_sign=int(rng.choice([-1, 1])),
            phase=float(rng.uniform(0, 2 * np.pi)),
        ))
    return out


def _sample_times(cfg: RadarConfig):
    """Absolute sample times ``[N_R, N_D]`` and time since the ego sweep start."""
    tau = np.broadcast_to(np.arange(cfg.n_range)[:, None] / cfg.sample_rate, cfg.shape[:2])
    m = np.arange(cfg.n_doppler)[None, :] * cfg.sweep_duration
    return tau + m, tau


def _ego_freq_phase(cfg: RadarConfig, tau: np.ndarray):
    """Instantaneous frequency and phase of the ego chirp relative to ``f_c``."""
    f0 = -cfg.bandwidth / 2
    k = cfg.chirp_slope
    return f0 + k * tau, 2 * np.pi * (f0 * tau + 0.5 * k * tau**2)


def _interferer_freq_phase(ic: InterfererConfig, cfg: RadarConfig, t: np.ndarray):
    local = t - ic.time_offset
    active = (local >= 0) & (local < ic.n_sweeps * ic.sweep_duration)
    # the small epsilon keeps exact sweep starts from rounding into the previous sweep
    tau = local - np.floor(local / ic.sweep_duration + 1e-9) * ic.sweep_duration
    f0 = ic.start_freq - cfg.carrier_freq
    k = ic.slope
    return f0 + k * tau, 2 * np.pi * (f0 * tau + 0.5 * k * tau**2) + ic.phase, active


def interference_burst(ic: InterfererConfig, cfg: RadarConfig = RadarConfig()):
    """Single-antenna dechirped burst ``[N_R, N_D]`` and its activity mask."""
    t, tau = _sample_times(cfg)
    f_e, ph_e = _ego_freq_phase(cfg, tau)
    f_i, ph_i, active = _interferer_freq_phase(ic, cfg, t)
    mask = active & (np.abs(f_i - f_e) < cfg.sample_rate / 2)
    sig = np.where(mask, np.exp(1j * (ph_i - ph_e)), 0.0)
    return sig, mask


def synthesize_interference(ics: Sequence[InterfererConfig], cfg: RadarConfig = RadarConfig()):
    """Unscaled interference cube ``[N_R, N_D, N_A]`` and the union burst mask."""
    if not ics:
        raise ValueError("no interferers given")
    a = np.arange(cfg.n_antennas)
    cube = np.zeros(cfg.shape, dtype=np.complex128)
    mask = np.zeros(cfg.shape[:2], dtype=bool)
    for ic in ics:
        sig, m = interference_burst(ic, cfg)
        steer = np.exp(2j * np.pi * cfg.antenna_spacing * a * np.sin(np.deg2rad(ic.aoa)))
        cube += sig[:, :, None] * steer[None, None, :]
        mask |= m
    return cube.astype(DTYPE), mask


def snir_gain(clean, interference, snir_db: float, active=None) -> float:
    """Amplitude factor ``g`` with ``10 log10(P_clean / P_int(g)) = snir_db``.

    Powers are means over the whole cube.  With ``active`` (a boolean mask
    over the leading axes) the interference power is averaged over the
    active samples only, i.e. it is the power *during* the bursts.
    """
    clean = np.asarray(clean, dtype=np.complex128)
    interference = np.asarray(interference, dtype=np.complex128)
    p_clean = float(np.mean(np.abs(clean) ** 2))
    if active is None:
        p_int = float(np.mean(np.abs(interference) ** 2))
    else:
        active = np.asarray(active, dtype=bool)
        if not active.any():
            raise ValueError("interference has zero power")
        p_int = float(np.mean(np.abs(interference[active]) ** 2))
    if p_int <= 0:
        raise ValueError("interference has zero power")
    return math.sqrt(p_clean / (p_int * 10 ** (snir_db / 10)))


def mix_at_snir(clean, interference, snir_db: float, active=None) -> np.ndarray:
    """``clean + g * interference`` with ``10 log10(P_clean / P_int) = snir_db``."""
    clean = np.asarray(clean)
    interference = np.asarray(interference)
    if clean.shape != interference.shape:
        raise ValueError(f"shape mismatch {clean.shape} vs {interference.shape}")
    g = snir_gain(clean, interference, snir_db, active)
    return (clean.astype(np.complex128) + g * interference).astype(DTYPE)


# ----------------------------------------------------------------------------
# samples and datasets


@dataclasses.dataclass
class DataSample:
    interfered_rda: np.ndarray
    clean_rda: np.ndarray
    peaks: list[tuple[int, int]]
    interference_mask: np.ndarray
    meta: dict


def derive_seed(*keys: int) -> int:
    """Counter-based child seed: depends only on ``keys``, not on call order."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def interfere(clean, ics: Sequence[InterfererConfig], cfg: RadarConfig = RadarConfig()):
    """Add every interferer to ``clean`` at its own level; return cube and union mask.

    ``snir_db`` of an interferer is applied as the ratio of its power during
    the burst to the mean clean (signal plus noise) power, interference being
    the stronger of the two.  Each interferer is scaled against the clean cube
    alone.
    """
    out = np.asarray(clean).astype(np.complex128)
    mask = np.zeros(cfg.shape[:2], dtype=bool)
    for ic in ics:
        cube, m = synthesize_interference([ic], cfg)
        if not m.any():
            continue
        out += snir_gain(clean, cube, -ic.snir_db, active=m) * cube.astype(np.complex128)
        mask |= m
    return out.astype(DTYPE), mask


MAX_ATTEMPTS = 64


def make_sample(seed: int, cfg: RadarConfig = RadarConfig(), fixed_aoa: Optional[float] = None,
                cfar: metrics.CfarConfig = metrics.CfarConfig()) -> DataSample:
    """Build one interfered/clean pair from ``seed``.

    Scenes without any CFAR peak and interferer sets with a silent interferer
    or a mask covering half the cube are redrawn from derived seeds.
    """
    for attempt in range(MAX_ATTEMPTS):
        s = derive_seed(seed, attempt)
        scene = sample_scene(s, cfg)
        clean = synthesize_clean(scene, cfg, noise_seed=s)
        clean_rda = dsp.time_to_rda(clean)
        _, peaks = metrics.detect(dsp.rda_to_rd(clean_rda), cfar)
        if not peaks:
            continue
        ics = sample_interferers(s, fixed_aoa, cfg)
        masks = [interference_burst(ic, cfg)[1] for ic in ics]
        union = np.logical_or.reduce(masks)
        if not all(m.any() for m in masks) or union.mean() >= 0.5:
            continue
        interfered, mask = interfere(clean, ics, cfg)
        meta = {
            "seed": int(seed),
            "attempt": attempt,
            "scene": scene.to_dict(),
            "interferers": [ic.to_dict() for ic in ics],
        }
        return DataSample(dsp.time_to_rda(interfered), clean_rda, peaks, mask, meta)
    raise RuntimeError(f"no valid sample after {MAX_ATTEMPTS} attempts (seed {seed})")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RADARIM_THREADS", "1")))
    except ValueError:
        return 1


def _write_sample(job):
    idx, sample_seed, out_dir, cfg, fixed_aoa, cfar = job
    sample = make_sample(sample_seed, cfg, fixed_aoa, cfar)
    sid = f"s{idx:05d}"
    paths = {
        "interfered_path": f"{sid}.interfered.crt",
        "clean_path": f"{sid}.clean.crt",
        "mask_path": f"{sid}.mask.crt",
    }
    save_tensor(out_dir / paths["interfered_path"], sample.interfered_rda)
    save_tensor(out_dir / paths["clean_path"], sample.clean_rda)
    save_tensor(out_dir / paths["mask_path"], sample.interference_mask.astype(DTYPE))
    return {
        "id": sid,
        **paths,
        "peaks": [list(p) for p in sample.peaks],
        "interferers": sample.meta["interferers"],
        "scene": sample.meta["scene"],
        "seed": sample_seed,
        "mask_fraction": float(sample.interference_mask.mean()),
    }


def generate_dataset(n_train: int, n_val: int, n_test: int, seed: int, out_dir,
                     cfg: RadarConfig = RadarConfig(), fixed_aoa: Optional[float] = None,
                     cfar: metrics.CfarConfig = metrics.CfarConfig(),
                     overwrite: bool = False) -> dict:
    """Write CRT1 samples plus ``manifest.json`` into ``out_dir``; return the manifest.

    Sample ``i`` is drawn from ``derive_seed(seed, i)``, so the output does not
    depend on the number of worker processes.
    """
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if any(c < 0 for c in counts.values()) or sum(counts.values()) == 0:
        raise ValueError(f"invalid split sizes {counts}")
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{out_dir} exists and is not empty")
        shutil.rmtree(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc

    jobs = []
    idx = 0
    for split, n in counts.items():
        for _ in range(n):
            jobs.append((idx, derive_seed(seed, idx), out_dir, cfg, fixed_aoa, cfar))
            idx += 1
    workers = worker_count()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_write_sample, jobs))
    else:
        records = [_write_sample(j) for j in jobs]

    splits = {}
    pos = 0
    for split, n in counts.items():
        splits[split] = records[pos:pos + n]
        pos += n
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "radar_config": cfg.to_dict(),
        "cfar": dataclasses.asdict(cfar),
        "seed": int(seed),
        "fixed_aoa": fixed_aoa,
        "splits": splits,
    }
    write_manifest(out_dir / "manifest.json", manifest)
    log.info("wrote %d samples to %s", idx, out_dir)
    return manifest


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["root"] = str(path.parent)
    return manifest


def radar_config(manifest: dict) -> RadarConfig:
    return RadarConfig(**manifest["radar_config"])


def load_sample(manifest: dict, record: dict) -> DataSample:
    from .tensor import load_tensor

    root = Path(manifest["root"])
    return DataSample(
        interfered_rda=load_tensor(root / record["interfered_path"]),
        clean_rda=load_tensor(root / record["clean_path"]),
        peaks=[tuple(p) for p in record["peaks"]],
        interference_mask=load_tensor(root / record["mask_path"]).real > 0.5,
        meta={k: record[k] for k in ("id", "seed", "interferers", "scene")},
    )
