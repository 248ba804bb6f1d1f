"""Benchmark catalog, case files, and end-to-end data generation."""

import os

import numpy as np
import pytest

from topinn.dataforge import cases, shapes
from topinn.errors import ConfigError
from topinn import metrics
from topinn.measurements import MeasurementSet


def test_catalog_contents():
    cat = cases.case_catalog()
    names = set(cat)
    assert "desk" in names
    # every family is represented
    fams = {c["family"] for c in cat.values()}
    assert fams == {"matrix", "matrix-hyper", "mit", "layer", "thermal"}
    # finite-strain twins exist for the matrix geometries
    for base in ("two-circles-void", "star-rect-void", "slit-void",
                 "u-void", "t-void", "four-circles-void"):
        assert base in names
        assert base + "-hyper" in names
    for nm in ("layer-sinusoid", "layer-pulse", "layer-random",
               "thermal-slit-insulating", "thermal-slit-conducting",
               "mit-soft"):
        assert nm in names


def test_build_case_materializes_models():
    c = cases.build_case("desk")
    assert c["family"] == "matrix"
    assert c["material"].family == "linear-elastic"
    assert c["material"].inclusion == "void"
    assert c["P_o"] == pytest.approx(0.01)
    assert c["bounds"] == (-0.5, 0.5, -0.5, 0.5)
    assert len(c["shapes"]) == 1

    h = cases.build_case("slit-void-hyper")
    assert h["family"] == "matrix-hyper"
    assert h["material"].family == "neo-hookean"
    assert h["P_o"] == pytest.approx(0.173 * 3.0 * 0.38)

    t = cases.build_case("thermal-slit-conducting")
    assert t["family"] == "thermal"
    assert t["material"].inclusion == "conducting"

    with pytest.raises(ConfigError):
        cases.build_case("no-such-case")


def test_truth_density_conventions():
    c = cases.build_case("desk")
    td = cases.truth_density(c, resolution=256)
    assert td.shape == (256, 256)
    assert set(np.unique(td)) == {0.0, 1.0}
    # void fraction approaches the disk area
    assert (1.0 - td.mean()) == pytest.approx(np.pi * 0.15**2, abs=2e-3)
    # center pixel is void, corners are material
    assert td[128, 128] == 0.0
    assert td[0, 0] == 1.0 and td[-1, -1] == 1.0

    wide = cases.truth_density(cases.build_case("mit-soft"), resolution=128)
    assert wide.shape == (128, 256)


def test_case_file_round_trip(tmp_path):
    for name in ("desk", "star-rect-void", "u-void-hyper",
                 "layer-random", "thermal-slit-insulating", "mit-soft"):
        c = cases.build_case(name)
        p = os.path.join(tmp_path, name + ".txt")
        cases.save_case(p, c, data_status="none")
        back = cases.load_case(p)
        assert back["name"] == name
        assert back["family"] == c["family"]
        assert back["data"] == "none"
        assert back["P_o"] == pytest.approx(c["P_o"])
        assert back["material"].family == c["material"].family
        assert back["material"].inclusion == c["material"].inclusion
        # geometry survives: same signed distance on a probe grid
        pts, _ = metrics.raster_points(c["bounds"], resolution=32)
        for s0, s1 in zip(c["shapes"], back["shapes"]):
            assert np.allclose(s0.sdf(pts), s1.sdf(pts), atol=1e-12)


def test_load_case_rejects_foreign_files(tmp_path):
    p = os.path.join(tmp_path, "bad.txt")
    with open(p, "w") as f:
        f.write("just some text\n")
    with pytest.raises(ConfigError):
        cases.load_case(p)
    with open(p, "w") as f:
        f.write("# case v1\nname desk\n")   # missing the other keys
    with pytest.raises(ConfigError):
        cases.load_case(p)


def test_generate_elastic_case(tmp_path):
    out = os.path.join(tmp_path, "desk")
    os.makedirs(out)
    cases.generate_case("desk", out, density=40, resolution=64)
    files = set(os.listdir(out))
    assert {"case.txt", "measurements.csv", "truth.csv", "truth.pgm"} <= files

    info = cases.load_case(os.path.join(out, "case.txt"))
    assert info["data"] == "fem"
    ms = MeasurementSet.load_csv(os.path.join(out, "measurements.csv"))
    assert ms.n_points == 400
    td = metrics.read_raster_csv(os.path.join(out, "truth.csv"))
    assert td.shape == (64, 64)

    # noiseless generation is deterministic
    out2 = os.path.join(tmp_path, "desk2")
    os.makedirs(out2)
    cases.generate_case("desk", out2, density=40, resolution=64)
    ms2 = MeasurementSet.load_csv(os.path.join(out2, "measurements.csv"))
    assert np.array_equal(ms.values["u1"], ms2.values["u1"])
    assert np.array_equal(ms.values["u2"], ms2.values["u2"])


def test_generate_thermal_case(tmp_path):
    out = os.path.join(tmp_path, "th")
    os.makedirs(out)
    cases.generate_case("thermal-slit-insulating", out, density=40,
                        resolution=64)
    ms = MeasurementSet.load_csv(os.path.join(out, "measurements.csv"))
    # one insulated side withheld
    assert ms.n_points == 300
    assert set(ms.components()) == {"T", "q1", "q2"}
    info = cases.load_case(os.path.join(out, "case.txt"))
    assert info["family"] == "thermal"
    assert info.get("missing_side") == "top"


def test_generate_layer_case(tmp_path):
    out = os.path.join(tmp_path, "layer")
    os.makedirs(out)
    cases.generate_case("layer-sinusoid", out, density=40, resolution=64)
    ms = MeasurementSet.load_csv(os.path.join(out, "measurements.csv"))
    assert ms.n_points == 100
    assert np.allclose(ms.points[:, 1], 0.0, atol=1e-12)
    td = metrics.read_raster_csv(os.path.join(out, "truth.csv"))
    assert td.shape == (64, 128)
    # substrate occupies the lower part of the strip
    assert td[0].mean() < 0.5 < td[-1].mean()


def test_generated_noise_is_seeded(tmp_path):
    a = os.path.join(tmp_path, "a"); os.makedirs(a)
    b = os.path.join(tmp_path, "b"); os.makedirs(b)
    c = os.path.join(tmp_path, "c"); os.makedirs(c)
    cases.generate_case("desk", a, density=20, resolution=32, noise=1e-4, seed=1)
    cases.generate_case("desk", b, density=20, resolution=32, noise=1e-4, seed=1)
    cases.generate_case("desk", c, density=20, resolution=32, noise=1e-4, seed=2)
    va = MeasurementSet.load_csv(os.path.join(a, "measurements.csv")).values["u1"]
    vb = MeasurementSet.load_csv(os.path.join(b, "measurements.csv")).values["u1"]
    vc = MeasurementSet.load_csv(os.path.join(c, "measurements.csv")).values["u1"]
    assert np.array_equal(va, vb)
    assert not np.allclose(va, vc)
