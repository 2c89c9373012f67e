import numpy as np
import pytest

from rotorstack.autopilot import (AttitudeRateCommand, Autopilot, Mixer,
                                  TorqueCommand)
from rotorstack.errors import InfeasibleAllocation
from rotorstack.plant import PlantModel, step_dynamics


@pytest.fixture(scope="module")
def mixer(x500_model_module):
    return Mixer(x500_model_module)


@pytest.fixture(scope="module")
def x500_model_module(request):
    from rotorstack.platforms import load_profiles
    return PlantModel(load_profiles().get("X500"))


class TestMixer:
    def test_pure_collective_splits_evenly(self, mixer):
        cmds, saturated = mixer.mix(TorqueCommand(np.zeros(3), 24.525))
        thrusts = cmds ** 2 * mixer.f_max
        assert np.allclose(thrusts, 24.525 / 4.0, atol=1e-12)
        assert not saturated

    def test_pure_yaw_flips_spin_pairs(self, mixer, x500_model_module):
        base, _ = mixer.mix(TorqueCommand(np.zeros(3), 24.525))
        yawed, _ = mixer.mix(TorqueCommand(np.array([0.0, 0.0, 0.05]), 24.525))
        fb = base ** 2 * mixer.f_max
        fy = yawed ** 2 * mixer.f_max
        spins = x500_model_module.derived.spin_directions
        delta = fy - fb
        # CCW rotors slow down, CW rotors speed up for +z torque, sum unchanged
        assert np.all(np.sign(delta) == -np.sign(spins))
        assert fy.sum() == pytest.approx(fb.sum(), abs=1e-12)

    def test_multiply_back_recovery(self, mixer, rng):
        for _ in range(200):
            f = rng.uniform(0.1, 0.9, size=4) * mixer.f_max
            wrench = mixer.A @ f
            cmds, saturated = mixer.mix(TorqueCommand(wrench[1:], wrench[0]))
            assert not saturated
            recomposed = mixer.recompose(cmds)
            assert np.allclose(recomposed, wrench, atol=1e-9)

    def test_octa_multiply_back(self, registry, rng):
        for name in ("NAKI", "Eagle.One", "DOFEC"):
            m = Mixer(PlantModel(registry.get(name)))
            for _ in range(100):
                f = rng.uniform(0.2, 0.8, size=8) * m.f_max
                wrench = m.A @ f
                if np.any(np.abs(np.linalg.pinv(m.A) @ wrench) > m.f_max):
                    continue
                cmds, _ = m.mix(TorqueCommand(wrench[1:], wrench[0]))
                assert np.allclose(m.recompose(cmds), wrench, atol=1e-9)

    def test_commands_always_in_range(self, mixer, rng):
        for _ in range(300):
            torque = rng.uniform(-5, 5, size=3)
            thrust = rng.uniform(-10, 120)
            cmds, _ = mixer.mix(TorqueCommand(torque, thrust))
            assert np.all(cmds >= 0.0) and np.all(cmds <= 1.0)

    def test_collective_preserved_under_torque_saturation(self, mixer):
        # absurd yaw demand: collective must survive, yaw gets scaled
        cmds, saturated = mixer.mix(TorqueCommand(np.array([0.0, 0.0, 50.0]), 24.525))
        assert saturated
        recomposed = mixer.recompose(cmds)
        assert recomposed[0] == pytest.approx(24.525, abs=1e-9)

    def test_roll_pitch_priority_over_yaw(self, mixer):
        torque = np.array([1.0, 0.5, 5.0])
        cmds, saturated = mixer.mix(TorqueCommand(torque, 24.525))
        assert saturated
        recomposed = mixer.recompose(cmds)
        assert recomposed[1] == pytest.approx(1.0, abs=1e-9)
        assert recomposed[2] == pytest.approx(0.5, abs=1e-9)
        assert abs(recomposed[3]) < 5.0

    def test_infeasible_thrust_raises_when_unclamped(self, mixer):
        with pytest.raises(InfeasibleAllocation):
            mixer.mix(TorqueCommand(np.zeros(3), -1.0), clamp_thrust=False)
        with pytest.raises(InfeasibleAllocation):
            mixer.mix(TorqueCommand(np.zeros(3), 1e4), clamp_thrust=False)

    def test_thrust_clamped_by_default(self, mixer):
        cmds, _ = mixer.mix(TorqueCommand(np.zeros(3), 1e4))
        assert np.allclose(cmds, 1.0)


class TestRateControl:
    def test_zero_error_gives_gyroscopic_feedforward(self, x500_model_module):
        ap = Autopilot(x500_model_module)
        omega = np.array([0.3, -0.2, 0.5])
        cmd = AttitudeRateCommand(20.0, omega.copy())
        out = ap.rate_controller.update(omega, cmd, 0.001)
        inertia = x500_model_module.inertia_diag
        expected = np.cross(omega, inertia * omega)
        assert np.allclose(out.torque, expected, atol=1e-12)

    def test_rate_step_sign(self, x500_model_module):
        ap = Autopilot(x500_model_module)
        out = ap.rate_controller.update(
            np.zeros(3), AttitudeRateCommand(20.0, np.array([0.0, 0.0, 1.0])), 0.001)
        assert out.torque[2] > 0.0

    def test_yaw_rate_step_settles_with_zero_sse(self, x500_model_module):
        ap = Autopilot(x500_model_module)
        state = x500_model_module.hover_state()
        cmd = AttitudeRateCommand(x500_model_module.derived.hover_thrust,
                                  np.array([0.0, 0.0, 1.0]))
        errors = []
        for _ in range(3000):
            u = ap.tick(state.body_rates, cmd, 0.001)
            state = step_dynamics(state, u, 0.001, x500_model_module)
            errors.append(abs(1.0 - state.body_rates[2]))
        errors = np.array(errors)
        above = np.nonzero(errors > 0.05)[0]
        settle = (above[-1] + 1) * 0.001 if len(above) else 0.0
        assert settle < 0.5
        assert errors[-1] < 1e-6  # integral action removes steady-state error

    def test_constant_disturbance_rejected(self, x500_model_module):
        # closed-loop simulation oracle: known torque disturbance on the plant
        ap = Autopilot(x500_model_module)
        state = x500_model_module.hover_state()
        cmd = AttitudeRateCommand(x500_model_module.derived.hover_thrust, np.zeros(3))
        disturbance = np.array([0.05, 0.0, 0.0])
        for _ in range(2000):
            u = ap.tick(state.body_rates, cmd, 0.001)
            state = step_dynamics(state, u, 0.001, x500_model_module,
                                  external_torque=disturbance)
        assert abs(state.body_rates[0]) < 1e-3

    def test_zero_thrust_zeroes_commands(self, x500_model_module):
        ap = Autopilot(x500_model_module)
        u = ap.tick(np.array([0.1, 0.2, -0.1]), AttitudeRateCommand(0.0, np.ones(3)),
                    0.001)
        assert np.all(u == 0.0)

    def test_deterministic_trace(self, x500_model_module):
        def run():
            ap = Autopilot(x500_model_module)
            state = x500_model_module.hover_state()
            cmd = AttitudeRateCommand(x500_model_module.derived.hover_thrust,
                                      np.array([0.1, -0.05, 0.2]))
            trace = []
            for _ in range(1000):
                u = ap.tick(state.body_rates, cmd, 0.001)
                state = step_dynamics(state, u, 0.001, x500_model_module)
                trace.append(u)
            return np.array(trace)

        assert np.array_equal(run(), run())

    def test_rate_commands_clamped_to_limit(self, x500_model_module):
        ap = Autopilot(x500_model_module)
        huge = AttitudeRateCommand(20.0, np.array([100.0, -100.0, 100.0]))
        u = ap.tick(np.zeros(3), huge, 0.001)
        assert np.all(u >= 0.0) and np.all(u <= 1.0)
