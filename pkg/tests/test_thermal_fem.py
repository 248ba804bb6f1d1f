"""Nonlinear conduction ground truth.

With k(T) = k0 (1 + T/T0) the homogeneous strip has the closed form
T(x1) = sqrt(4 - 3 x1) - 1, which pins both the solver accuracy and the
measured wall flux q1 = 3/2.
"""

import numpy as np
import pytest

from topinn.dataforge import fem, shapes, thermal
from topinn.errors import ConfigError, SolverError
from topinn.physics import MaterialModel


def _unit_square(density=40, holes=()):
    return fem.build_mesh((0.0, 1.0, 0.0, 1.0), list(holes), density=density)


def _exact_T(x):
    return np.sqrt(4.0 - 3.0 * x) - 1.0


def test_homogeneous_matches_closed_form():
    m = _unit_square(density=40)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    assert sol.meta["residual"] <= 1e-10
    assert sol.meta["iterations"] < 500
    probe = np.array([[0.5, 0.5], [0.25, 0.1], [0.75, 0.9]])
    T = sol.temperature_at(probe)
    # x = 0.5 lies on a node line, where the value is superconvergent
    assert T[0] == pytest.approx(0.5811388300841898, abs=1e-8)
    assert np.abs(T - _exact_T(probe[:, 0])).max() < 1e-4


def test_dirichlet_values_exact():
    m = _unit_square(density=20)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    left = fem._side_nodes(m, "left")
    right = fem._side_nodes(m, "right")
    assert np.abs(sol.T[left] - 1.0).max() == 0.0
    assert np.abs(sol.T[right]).max() == 0.0


def test_insulated_sides_carry_no_normal_flux():
    # the homogeneous solution is one-dimensional, so q2 vanishes identically
    m = _unit_square(density=40)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    pts = np.column_stack([np.linspace(0.05, 0.95, 19),
                           np.full(19, 1e-9)])
    assert np.abs(sol.flux_at(pts)[:, 1]).max() < 1e-12
    pts[:, 1] = 1.0 - 1e-9
    assert np.abs(sol.flux_at(pts)[:, 1]).max() < 1e-12


def test_flux_is_conserved_along_the_strip():
    # exact flux is q1 = 3/2 everywhere; element-center values converge fast
    m = _unit_square(density=40)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    xs = np.array([0.2125, 0.5125, 0.7875])      # element centers
    q = sol.flux_at(np.column_stack([xs, np.full(3, 0.5125)]))
    assert np.abs(q[:, 0] - 1.5).max() < 2e-3


def test_conducting_inclusion_is_isothermal():
    slit = shapes.ShapeSpec("slit", cx=0.5, cy=0.5, hx=0.15, hy=0.03,
                            angle=0.6)
    m = _unit_square(density=40, holes=[slit])
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="conducting"))
    incl_nodes = np.unique(m.elems[m.phase == 1])
    spread = np.ptp(sol.T[incl_nodes])
    assert spread < 1e-12
    assert sol.meta["residual"] <= 1e-10
    # the isothermal patch sits strictly between the wall temperatures
    assert 0.0 < sol.T[incl_nodes[0]] < 1.0


def test_insulating_inclusion_diverts_heat():
    slit = shapes.ShapeSpec("slit", cx=0.5, cy=0.5, hx=0.15, hy=0.03,
                            angle=0.6)
    m = _unit_square(density=40, holes=[slit])
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    assert sol.meta["residual"] <= 1e-10
    active_nodes = np.unique(m.elems[m.phase == 0])
    T = sol.T[active_nodes]
    assert np.all(np.isfinite(T))
    assert T.min() >= -1e-12 and T.max() <= 1.0 + 1e-12
    # the obstruction must perturb the 1D profile
    ref = thermal.thermal_solve(_unit_square(density=40),
                                MaterialModel.thermal(inclusion="insulating"))
    probe = np.array([[0.5, 0.85]])
    assert abs(sol.temperature_at(probe)[0]
               - ref.temperature_at(probe)[0]) > 1e-4


def test_conducting_beats_homogeneous_transport():
    # a perfectly conducting patch short-circuits part of the strip, so the
    # total heat flow rises relative to the homogeneous case
    slit = shapes.ShapeSpec("slit", cx=0.5, cy=0.5, hx=0.15, hy=0.03,
                            angle=0.0)
    m = _unit_square(density=40, holes=[slit])
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="conducting"))
    # inside a perfect conductor the gradient is zero, so read the total
    # cross-section flow on a matrix-only line left of the patch
    ys = (np.arange(40) + 0.5) / 40.0
    line = np.column_stack([np.full(40, 0.2125), ys])
    q_total = sol.flux_at(line)[:, 0].mean()
    assert q_total > 1.5


def test_thermal_measurements_layout():
    m = _unit_square(density=40)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    ms = thermal.extract_thermal_measurements(sol)
    assert ms.n_points == 400
    assert set(ms.components()) == {"T", "q1", "q2"}
    # flux observed on the temperature-controlled sides, temperature on the
    # insulated ones
    on_left = ms.points[:, 0] < 1e-6
    on_bottom = (ms.points[:, 1] < 1e-6) & ~on_left
    assert ms.mask["q1"][on_left].all()
    assert not ms.mask["T"][on_left].any()
    assert ms.mask["T"][on_bottom].all()
    assert not ms.mask["q1"][on_bottom].any()
    # wall flux approaches the exact value linearly in h; keep it loose
    q1 = ms.values["q1"][on_left]
    assert np.abs(q1 - 1.5).max() < 0.02

    short = thermal.extract_thermal_measurements(sol, missing_side="top")
    assert short.n_points == 300
    assert np.abs(short.points[:, 1].max() - 1.0) > 1e-3

    with pytest.raises(ConfigError):
        thermal.extract_thermal_measurements(sol, missing_side="roof")


def test_thermal_measurement_noise_seeded():
    m = _unit_square(density=20)
    sol = thermal.thermal_solve(m, MaterialModel.thermal(inclusion="insulating"))
    a = thermal.extract_thermal_measurements(sol, noise=1e-3, seed=11)
    b = thermal.extract_thermal_measurements(sol, noise=1e-3, seed=11)
    c = thermal.extract_thermal_measurements(sol, noise=1e-3, seed=12)
    assert np.array_equal(a.values["T"][a.mask["T"]], b.values["T"][b.mask["T"]])
    assert not np.allclose(a.values["T"][a.mask["T"]],
                           c.values["T"][c.mask["T"]])
    # NaN pattern untouched by noise
    assert np.array_equal(a.mask["T"], c.mask["T"])


def test_inclusion_on_dirichlet_side_rejected():
    blob = shapes.ShapeSpec("circle", cx=0.0, cy=0.5, r=0.1)
    m = _unit_square(density=20, holes=[blob])
    with pytest.raises(ConfigError):
        thermal.thermal_solve(m, MaterialModel.thermal(inclusion="conducting"))


def test_wrong_model_family_rejected():
    m = _unit_square(density=10)
    with pytest.raises(ConfigError):
        thermal.thermal_solve(m, MaterialModel.linear(inclusion="void"))
