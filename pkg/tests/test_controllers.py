import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vslmarl import ACTIONS_MPH
from vslmarl.controllers import (NoControl, PolicyController, SpeedMatchConfig, SpeedMatching,
                                 invalid_action_mask, masked_probs, no_control,
                                 policy_controller, round_to_ten, speed_matching,
                                 stepdown_violations)
from vslmarl.env import apply_mask
from vslmarl.nn import MLP
from vslmarl.sensing import SensorReading
from vslmarl.sim.layout import CorridorLayout

GANTRIES = [0.5, 1.0, 1.5, 2.0, 2.5]


def layout(gantries=GANTRIES):
    return CorridorLayout(length=3.0, lanes=2, gantry_positions=list(gantries),
                          sensor_positions=list(gantries))


def readings(speeds, occ=None):
    occ = occ if occ is not None else [0.05] * len(speeds)
    return [SensorReading(k, 60.0, float(v), float(o), 1000.0)
            for k, (v, o) in enumerate(zip(speeds, occ))]


def biased_actor(favourite: int) -> MLP:
    net = MLP.zeros([5, 8, 5])
    net.biases[-1][favourite] = 5.0
    return net


def random_traffic(rng, n):
    return np.column_stack([rng.uniform(5, 75, n), rng.uniform(0, 0.5, n),
                            rng.uniform(5, 75, n), rng.uniform(0, 0.5, n)])


class TestNoControl:
    def test_always_seventy(self, rng):
        assert np.array_equal(no_control(readings([10, 20, 70])), [70, 70, 70])
        ctl = NoControl()
        ctl.reset(layout())
        out = ctl.act(readings([5.0] * 5), random_traffic(rng, 5))
        assert np.array_equal(out, np.full(5, 70.0))

    def test_empty_corridor(self):
        assert no_control([]).size == 0


class TestInvalidActionMask:
    def test_after_thirty(self):
        m = invalid_action_mask(30)
        assert [a for a, bad in zip(ACTIONS_MPH, m.invalid) if bad] == [50, 60, 70]
        assert [a for a, ok in zip(ACTIONS_MPH, m.valid) if ok] == [30, 40]

    def test_after_seventy_or_lead_agent(self):
        assert not invalid_action_mask(70).invalid.any()
        assert not invalid_action_mask(30, most_downstream=True).invalid.any()

    def test_after_fifty(self):
        m = invalid_action_mask(50)
        assert [a for a, bad in zip(ACTIONS_MPH, m.invalid) if bad] == [70]

    @pytest.mark.parametrize("prev", ACTIONS_MPH)
    def test_thirty_is_always_valid(self, prev):
        assert invalid_action_mask(prev).valid[0]


class TestMaskedProbs:
    def test_uniform_after_thirty(self):
        p = masked_probs(np.full(5, 0.2), 30)
        assert np.allclose(p, [0.5, 0.5, 0, 0, 0], atol=1e-15)

    def test_zero_valid_mass_falls_back_to_uniform_valid(self):
        p = apply_mask(np.array([0, 0, 0, 0, 1.0]), invalid_action_mask(30).valid)
        assert np.allclose(p, [0.5, 0.5, 0, 0, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=5, max_size=5), st.sampled_from(ACTIONS_MPH),
       st.booleans())
def test_mask_renormalisation(raw, prev, lead):
    p = np.asarray(raw) / np.sum(raw)
    valid = invalid_action_mask(prev, most_downstream=lead).valid
    q = masked_probs(p, prev, most_downstream=lead)
    assert abs(q[valid].sum() - 1.0) <= 1e-12
    assert not q[~valid].any()
    ratio = q[valid] / p[valid]
    assert np.allclose(ratio, ratio[0], rtol=1e-12)


def test_masked_sampling_never_emits_invalid_action():
    rng = np.random.default_rng(7)
    draws = 100_000
    prevs = rng.choice(ACTIONS_MPH, size=draws)
    logits = rng.normal(size=(draws, 5)) * 3
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    acts = np.asarray(ACTIONS_MPH, dtype=float)
    bad = 0
    for prev, p in zip(prevs, probs):
        q = masked_probs(p, prev)
        a = acts[rng.choice(5, p=q)]
        bad += a > prev + 10
    assert bad == 0


class TestSpeedMatching:
    def config(self, **kw):
        return SpeedMatchConfig(**{"distance_limit": 0.0, **kw})

    def test_rounds_and_steps_back_up(self):
        hist = [readings([37, 70, 70, 70, 70], [0.3, 0.05, 0.05, 0.05, 0.05])] * 2
        out = speed_matching(hist, layout(), self.config())
        assert np.array_equal(out, [40, 50, 60, 70, 70])

    def test_free_flow_never_triggers(self):
        hist = [readings([70] * 5)] * 10
        assert np.array_equal(speed_matching(hist, layout()), np.full(5, 70.0))

    def test_lower_bound_clamp(self):
        hist = [readings([12, 70, 70, 70, 70])] * 2
        out = speed_matching(hist, layout(), self.config())
        assert out[0] == 30 and np.array_equal(out[1:], [40, 50, 60, 70])

    def test_needs_persistence(self):
        out = speed_matching([readings([12, 70, 70, 70, 70])], layout(), self.config())
        assert np.array_equal(out, np.full(5, 70.0))

    def test_empty_history_is_free_flow(self):
        assert np.array_equal(speed_matching([], layout()), np.full(5, 70.0))

    def test_release_hysteresis(self):
        ctl = SpeedMatching(self.config())
        ctl.reset(layout())
        slow, mid, fast = (readings([v, 70, 70, 70, 70]) for v in (20, 50, 66))
        for r in (slow, slow):
            out = ctl.gantry_profile(r)
        assert out[0] == 30
        # between trigger and release: stays latched
        for _ in range(5):
            out = ctl.gantry_profile(mid)
        assert out[0] == 50
        for _ in range(2):
            out = ctl.gantry_profile(fast)
        assert out[0] == 70 and ctl.active[0]
        out = ctl.gantry_profile(fast)
        assert not ctl.active[0] and out[0] == 70

    def test_coverage_reaches_downstream_within_distance_limit(self):
        hist = [readings([20, 70, 70, 70, 70])] * 2
        out = speed_matching(hist, layout(), SpeedMatchConfig(distance_limit=1.0))
        # gantries 0.5, 1.0 and 1.5 all see the slow sensor at 0.5
        assert np.array_equal(out, [30, 30, 30, 40, 50])

    def test_occupancy_trigger(self):
        hist = [readings([50, 70, 70, 70, 70], [0.25, 0, 0, 0, 0])] * 2
        out = speed_matching(hist, layout(), self.config())
        assert out[0] == 50

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SpeedMatchConfig(release_speed=40.0)
        with pytest.raises(ValueError):
            SpeedMatchConfig(persistence=0)

    def test_act_selects_agent_gantries(self):
        lay = CorridorLayout(length=3.0, lanes=2, gantry_positions=GANTRIES,
                             sensor_positions=GANTRIES, agent_gantries=[1, 2, 3, 4])
        ctl = SpeedMatching(self.config())
        ctl.reset(lay)
        for _ in range(2):
            out = ctl.act(readings([70, 33, 70, 70, 70]), np.zeros((4, 4)))
        assert np.array_equal(out, [30, 40, 50, 60])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(0, 80), min_size=5, max_size=5), min_size=1, max_size=8))
def test_speed_matching_respects_step_down(history):
    ctl = SpeedMatching()
    ctl.reset(layout())
    for speeds in history:
        out = ctl.gantry_profile(readings(speeds, [0.1] * 5))
        assert stepdown_violations(out) == 0
        assert out.min() >= 30 and out.max() <= 70


@pytest.mark.parametrize("speed,expected", [(37, 40), (35, 40), (34.9, 30), (12, 10), (70, 70)])
def test_round_to_ten(speed, expected):
    assert round_to_ten(speed) == expected


class TestPolicyController:
    def test_masking_removes_step_down_violations(self, rng):
        # a policy that loves 70 after a 30 would violate the rule without the mask
        net = MLP.init([5, 16, 5], rng, out_gain=3.0)
        for _ in range(50):
            traffic = random_traffic(rng, 8)
            out = policy_controller(net, traffic, masking=True)
            assert stepdown_violations(out) == 0

    def test_masking_changes_nothing_without_triggering_states(self, rng):
        net = biased_actor(4)
        traffic = random_traffic(rng, 6)
        on = policy_controller(net, traffic, masking=True)
        off = policy_controller(net, traffic, masking=False)
        assert np.array_equal(on, off) and np.array_equal(on, np.full(6, 70.0))

    def test_unmasked_policy_can_violate(self, rng):
        # posts 30 behind a 70 and 70 behind a 30, alternating along the corridor
        net = MLP.zeros([5, 5])
        net.weights[0][0, 0] = 20.0  # weight on the normalised previous action
        net.biases[0][4] = 15.0
        out = policy_controller(net, random_traffic(rng, 3), masking=False)
        assert out[0] == 30 and stepdown_violations(out) > 0
        masked = policy_controller(net, random_traffic(rng, 3), masking=True)
        assert stepdown_violations(masked) == 0

    def test_deterministic(self, rng):
        net = MLP.init([5, 16, 5], rng, out_gain=1.0)
        traffic = random_traffic(rng, 5)
        for mode in ("argmax", "sample"):
            a = PolicyController(net, mode=mode, seed=3)
            b = PolicyController(net, mode=mode, seed=3)
            assert np.array_equal(a.act(None, traffic), b.act(None, traffic))

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            PolicyController(MLP.zeros([5, 5]), mode="greedy")

    def test_lead_agent_sees_default_previous_action(self, rng):
        ctl = PolicyController(biased_actor(0))
        d = ctl.decide(random_traffic(rng, 4))
        assert d.observations[0, 0] == 70 and np.all(d.observations[1:, 0] == 30)
