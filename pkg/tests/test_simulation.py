"""
Rigid-body stepping, contact response, event logs and the shaking scenario.
"""
import numpy as np
import pytest

from app.exceptions import CheckpointError, EmptyInputError
from app.models.geometry import Pose
from app.models.simulation import BodyState, Shake, SimConfig
from app.services.detectors import ContactInfo, build_detector
from app.services.locc import init_params
from app.services.simulation import (
    body_from_object,
    energy,
    read_event_log,
    replay_event,
    resolve_contact,
    run_env,
    run_shake_scenario,
    sd_statistics,
    shake_world,
    simulation_detector,
    write_event_log,
)
from conftest import translated


G = 9.81


@pytest.fixture(scope="module")
def ground(objects, slab):
    return {"slab": slab, "box_cube": objects["box_cube"]}


def static(entry, density=500.0):
    return body_from_object(entry, Pose.identity(), density, Shake(Pose.identity(), np.zeros(3), 0.0))


def moving(body: BodyState, velocity) -> BodyState:
    return BodyState(body.mesh_id, body.pose, velocity, np.zeros(3), body.mass, body.inertia, body.shake)


class TestBodies:

    def test_mass_and_inertia(self, cube):
        body = body_from_object(cube, translated(z=1.0), density=500.0)
        assert body.mass == pytest.approx(500.0 * 0.06 ** 3)
        np.testing.assert_allclose(np.diag(body.inertia), [body.mass * 0.0072 / 12] * 3)
        assert not body.kinematic

    def test_rejects_bad_inertia(self, cube):
        with pytest.raises(ValueError):
            BodyState("box_cube", Pose.identity(), np.zeros(3), np.zeros(3), 1.0, -np.eye(3))
        with pytest.raises(ValueError):
            BodyState("box_cube", Pose.identity(), np.zeros(3), np.zeros(3), 0.0, np.eye(3))

    def test_energy_skips_kinematic_bodies(self, cube, slab):
        body = body_from_object(cube, translated(z=2.0), density=500.0)
        assert energy([body, static(slab)], (0, 0, -G)) == pytest.approx(body.mass * G * 2.0)


class TestStepping:

    def test_free_fall(self, objects, cube):
        cfg = SimConfig()
        body = body_from_object(cube, translated(z=1.0), cfg.density)
        _, _, (final,) = run_env([body], cfg, build_detector("exact", objects), steps=50)
        assert 1.0 - final.pose.translation[2] == pytest.approx(0.5 * G * 0.5 ** 2, rel=0.01)
        assert final.linear_velocity[2] == pytest.approx(-G * 0.5, rel=1e-9)

    def test_disjoint_static_bodies_report_nothing(self, objects, cube):
        cfg = SimConfig(gravity=(0.0, 0.0, 0.0))
        bodies = [body_from_object(cube, translated(), cfg.density),
                  body_from_object(objects["cone"], translated(x=0.5), cfg.density)]
        events, energies, final = run_env(bodies, cfg, build_detector("exact", objects), steps=5)
        assert events == []
        assert energies == [0.0] * 6
        np.testing.assert_array_equal(final[1].pose.translation, [0.5, 0, 0])

    def test_head_on_impulses_are_equal_and_opposite(self, objects, cube):
        cfg = SimConfig(gravity=(0.0, 0.0, 0.0), sd_samples=100)
        bodies = [moving(body_from_object(cube, translated(x=-0.029), cfg.density), [0.1, 0, 0]),
                  moving(body_from_object(cube, translated(x=0.029), cfg.density), [-0.1, 0, 0])]
        events, _, final = run_env(bodies, cfg, build_detector("exact", objects), steps=10)
        assert events
        assert events[0].step == 0 and events[0].pair == (0, 1)
        assert events[0].impulse1[0] < 0
        assert len({e.step for e in events}) == len(events)
        for event in events:
            np.testing.assert_array_equal(np.array(event.impulse1[:3]), -np.array(event.impulse2[:3]))
            assert event.impulse1[0] <= 0
        assert final[0].linear_velocity[0] < 0 < final[1].linear_velocity[0]

    def test_events_replay_exactly(self, tmp_path, objects, cube):
        cfg = SimConfig(gravity=(0.0, 0.0, 0.0), sd_samples=100)
        bodies = [body_from_object(cube, translated(x=-0.029), cfg.density),
                  body_from_object(cube, translated(x=0.029), cfg.density)]
        events, _, _ = run_env(bodies, cfg, build_detector("exact", objects), steps=2)
        for event in events:
            assert replay_event(event, objects, cfg.sd_samples) == event.min_abs_sd
        loaded = read_event_log(write_event_log([events], tmp_path / "events.jsonl"))
        assert loaded == events

    def test_settles_on_static_ground(self, ground):
        cfg = SimConfig(sd_samples=100)
        start = body_from_object(ground["box_cube"], translated(z=0.045), cfg.density)
        events, energies, final = run_env([static(ground["slab"]), start], cfg, build_detector("exact", ground),
                                          steps=50)
        drop = start.mass * G * 0.0055
        assert events
        assert max(energies) <= energies[0] + 0.5 * drop
        assert energies[-1] < energies[0]
        assert 0.035 < final[1].pose.translation[2] < 0.045
        assert np.linalg.norm(final[1].linear_velocity) < 0.05
        np.testing.assert_array_equal(final[0].pose.translation, [0, 0, 0])


class TestContactResponse:

    def test_gradient_impulse_moves_down_the_gradient(self, cube):
        cfg = SimConfig()
        b1 = body_from_object(cube, translated(), cfg.density)
        b2 = body_from_object(cube, translated(x=0.05), cfg.density)
        g1 = np.array([0, 0, 0, 0, 1.0, 0, 0])
        g2 = np.array([0, 0, 0, 0, -1.0, 0, 0])
        j1, j2 = resolve_contact(b1, b2, ContactInfo(score=0.9, gradients=(g1, g2)), cfg)
        expected = b1.mass * cfg.stiffness * 0.4 * cfg.locc_depth_scale * cfg.dt
        np.testing.assert_allclose(j1, [-expected, 0, 0, 0, 0, 0], atol=1e-15)
        np.testing.assert_allclose(j2, [expected, 0, 0, 0, 0, 0], atol=1e-15)

    def test_below_threshold_gives_no_impulse(self, cube):
        cfg = SimConfig()
        b1 = body_from_object(cube, translated(), cfg.density)
        b2 = body_from_object(cube, translated(x=0.05), cfg.density)
        g = np.array([0, 0, 0, 0, 1.0, 0, 0])
        j1, j2 = resolve_contact(b1, b2, ContactInfo(score=0.3, gradients=(g, -g)), cfg)
        assert not np.any(j1) and not np.any(j2)

    def test_vanishing_gradient_is_never_attractive(self, cube):
        cfg = SimConfig()
        b1 = moving(body_from_object(cube, translated(), cfg.density), [-0.2, 0, 0])
        b2 = body_from_object(cube, translated(x=0.05), cfg.density)
        zero = np.zeros(7)
        j1, j2 = resolve_contact(b1, b2, ContactInfo(score=0.9, gradients=(zero, zero)), cfg)
        assert not np.any(j1) and not np.any(j2)

    def test_geometric_contact_pushes_apart(self, cube):
        cfg = SimConfig()
        b1 = body_from_object(cube, translated(), cfg.density)
        b2 = body_from_object(cube, translated(x=0.05), cfg.density)
        info = ContactInfo(score=0.01, depth=0.01, normal=np.array([-1.0, 0, 0]), point=np.array([0.025, 0, 0]))
        j1, j2 = resolve_contact(b1, b2, info, cfg)
        assert j1[0] < 0 < j2[0]
        np.testing.assert_array_equal(j1[:3], -j2[:3])


class TestScenario:

    def test_world_layout(self, objects):
        cfg = SimConfig()
        bodies = shake_world(objects, cfg, np.random.default_rng([0, 0]))
        assert len(bodies) == 3
        assert bodies[0].mesh_id == "bowl_wide" and bodies[0].kinematic
        assert all(not b.kinematic and b.mesh_id in cfg.drop_ids for b in bodies[1:])
        assert bodies[1].pose.translation[2] < bodies[2].pose.translation[2]

    def test_world_needs_known_objects(self, objects):
        with pytest.raises(ValueError):
            shake_world(objects, SimConfig(bowl_id="saucer"), np.random.default_rng(0))
        with pytest.raises(ValueError):
            shake_world(objects, SimConfig(drop_ids=["box_cube", "marble"]), np.random.default_rng(0))

    def test_zero_duration(self, objects):
        result = run_shake_scenario(objects, SimConfig(), n_envs=2, duration=0.0, seed=0)
        assert result.logs == [[], []]
        assert result.statistics is None
        assert result.steps == 0
        assert len(result.energies) == 2

    def test_argument_checks(self, objects):
        with pytest.raises(ValueError):
            run_shake_scenario(objects, SimConfig(), n_envs=0, duration=1.0, seed=0)
        with pytest.raises(ValueError):
            run_shake_scenario(objects, SimConfig(), n_envs=1, duration=-1.0, seed=0)

    def test_learned_detector_needs_a_checkpoint(self, objects, tiny_locc):
        cfg = SimConfig(detector="locc")
        with pytest.raises(CheckpointError):
            simulation_detector(objects, cfg)
        detector = simulation_detector(objects, cfg, (init_params(tiny_locc), tiny_locc))
        assert detector.name == "locc"

    def test_statistics(self):
        stats = sd_statistics([float(v) for v in range(1, 21)])
        assert stats.events == 20
        assert stats.average == pytest.approx(10.5)
        assert stats.top10_average == pytest.approx(19.5)
        assert stats.maximum == 20.0
        with pytest.raises(EmptyInputError):
            sd_statistics([])

    @pytest.mark.slow
    def test_short_shake_is_reproducible(self, objects):
        cfg = SimConfig(sd_samples=100, threads=2)
        a = run_shake_scenario(objects, cfg, n_envs=2, duration=0.2, seed=4)
        b = run_shake_scenario(objects, cfg.model_copy(update={"threads": 1}), n_envs=2, duration=0.2, seed=4)
        assert a.steps == 20
        assert a.logs == b.logs
        assert all(len(e) == 21 for e in a.energies)
