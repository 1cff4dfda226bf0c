import numpy as np
import pytest

from radarim import dsp, render, sim


def _object_rda(azimuth=30.0):
    cfg = sim.RadarConfig(n_range=32, n_doppler=16, n_antennas=8)
    scene = sim.Scene((sim.RadarObject(range=cfg.max_range / 16 * 5, velocity=0.0, azimuth=azimuth, amplitude=1.0),))
    return dsp.time_to_rda(sim.synthesize_clean(scene, cfg))


def test_range_angle_power_is_doppler_sum():
    rda = _object_rda()
    p = render.range_angle_power(rda)
    np.testing.assert_allclose(p, np.sum(np.abs(rda.astype(complex)) ** 2, axis=1))
    assert p.shape == (32, 8)


def test_max_maps_to_zero_db():
    db = render.to_db(render.range_angle_power(_object_rda()))
    assert db.max() == 0.0
    assert np.unravel_index(np.argmax(db), db.shape) == (5, 4 + 2)


def test_upsampling_is_display_only_and_keeps_peak():
    rda = _object_rda(azimuth=0.0)
    up = render.range_angle_power(rda, upsample=8)
    assert up.shape == (32, 64)
    # on-grid angle: the coarse bins are a subsample of the fine grid
    coarse = render.range_angle_power(rda)
    np.testing.assert_allclose(up[:, ::8], coarse, rtol=1e-4, atol=1e-6 * coarse.max())
    with pytest.raises(ValueError):
        render.range_angle_power(rda, upsample=0)


def test_degenerate_dynamic_range():
    with pytest.raises(render.DegenerateMapError, match="degenerate dynamic range"):
        render.to_db(np.zeros((3, 3)))


def test_gray_scale_and_pgm(tmp_path):
    db = np.array([[0.0, -20.0], [-40.0, -80.0]])
    gray = render.to_gray(db, 40.0)
    np.testing.assert_array_equal(gray, [[255, 128], [0, 0]])
    render.write_pgm(tmp_path / "g.pgm", gray)
    raw = (tmp_path / "g.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(render.read_pgm(tmp_path / "g.pgm"), gray)


def test_ascii_preview_marks_peak():
    db = np.full((4, 4), -60.0)
    db[1, 2] = 0.0
    lines = render.ascii_preview(db, rows=4, cols=4).splitlines()
    assert lines[1][2] == "@" and lines[0] == "    "


def test_render_files_are_reproducible(tmp_path):
    rda = _object_rda()
    a = render.render_range_angle(rda, tmp_path / "a", "x", upsample=2)
    b = render.render_range_angle(rda, tmp_path / "b", "x", upsample=2)
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_report_figures(tmp_path):
    rows = [{"method": "imat", "F1": 0.9, "EVM": 0.1, "PPMSE": 0.01},
            {"method": "none", "F1": 0.4, "EVM": 1.3, "PPMSE": 0.7}]
    render.metrics_figure(rows, tmp_path / "m.png", "test")
    render.history_figure([{"epoch": 0, "train_mse": 1.0, "val_mse": 2.0},
                           {"epoch": 1, "train_mse": 0.5, "val_mse": 0.7}], tmp_path / "h.png")
    assert (tmp_path / "m.png").read_bytes()[:4] == b"\x89PNG"
    assert (tmp_path / "h.png").stat().st_size > 1000
