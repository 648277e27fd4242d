import numpy as np
import pytest

from fdpower.baselines import WmmseConfig, greedy_topL, wmmse
from fdpower.errors import ConfigError, DomainError
from fdpower.netgen import ExperimentConfig, sample_instance
from fdpower.phy import weighted_sum_rate
from tests.test_phy import make_instance


class TestWmmse:
    def test_single_link_saturates(self):
        inst = make_instance([[0.17]], noise_var=1e-4)
        assert wmmse(inst) == pytest.approx([1.0])

    def test_decoupled_links_saturate(self):
        inst = make_instance([[0.2, 0.0], [0.0, 0.05]], noise_var=1e-4)
        assert wmmse(inst) == pytest.approx([1.0, 1.0])

    def test_feasibility_box(self):
        for seed in range(5):
            inst = sample_instance(ExperimentConfig(num_links=20, fd_fraction=0.5), seed)
            p = wmmse(inst)
            assert np.all(p >= 0.0) and np.all(p <= inst.config.p_max + 1e-12)

    def test_deterministic(self):
        inst = sample_instance(ExperimentConfig(num_links=15, fd_fraction=0.5), 3)
        assert np.array_equal(wmmse(inst), wmmse(inst))

    def test_monotone_objective_hd(self):
        # Block-coordinate ascent: the weighted sum rate never drops across
        # sweeps on half-duplex instances (1e-9 slack for roundoff).
        for seed in range(10):
            inst = sample_instance(ExperimentConfig(num_links=10, fd_fraction=0.0), seed)
            _, objs = wmmse(inst, return_objectives=True)
            diffs = np.diff(objs)
            assert np.all(diffs >= -1e-9)

    def test_beats_random_search_small(self):
        # 20 random K=4 HD instances, 1000 random feasible vectors each.
        rng = np.random.default_rng(17)
        wins = 0
        for seed in range(20):
            inst = sample_instance(ExperimentConfig(num_links=4, fd_fraction=0.0), seed)
            obj_wmmse = weighted_sum_rate(inst, wmmse(inst))
            candidates = rng.uniform(0.0, 1.0, size=(1000, 4))
            best = max(weighted_sum_rate(inst, c) for c in candidates)
            if obj_wmmse >= best:
                wins += 1
        assert wins >= 18

    def test_beats_greedy_on_average(self):
        cfg = ExperimentConfig(num_links=50, fd_fraction=0.5)
        w_obj, g_obj = [], []
        for seed in range(100):
            inst = sample_instance(cfg, seed)
            w_obj.append(weighted_sum_rate(inst, wmmse(inst)))
            g_obj.append(weighted_sum_rate(inst, greedy_topL(inst, 25)))
        assert np.mean(w_obj) > np.mean(g_obj)

    def test_respects_max_iters(self):
        inst = sample_instance(ExperimentConfig(num_links=10, fd_fraction=0.0), 0)
        _, objs = wmmse(inst, WmmseConfig(max_iters=3, rel_tol=1e-30), return_objectives=True)
        assert len(objs) == 3

    def test_config_validation(self):
        inst = make_instance([[0.2]])
        with pytest.raises(ConfigError):
            wmmse(inst, WmmseConfig(max_iters=0))
        with pytest.raises(ConfigError):
            wmmse(inst, WmmseConfig(rel_tol=-1.0))


class TestGreedy:
    def test_sorted_selection(self):
        inst = make_instance(np.diag([0.9, 0.1, 0.5, 0.3]))
        assert np.array_equal(greedy_topL(inst, 2), [1.0, 0.0, 1.0, 0.0])

    def test_all_active(self):
        inst = make_instance(np.diag([0.9, 0.1, 0.5]))
        assert np.array_equal(greedy_topL(inst, 3), [1.0, 1.0, 1.0])

    def test_half_of_fifty(self):
        inst = sample_instance(ExperimentConfig(num_links=50, fd_fraction=0.5), 1)
        p = greedy_topL(inst, 25)
        assert int(np.count_nonzero(p)) == 25

    def test_tie_breaks_to_lower_index(self):
        inst = make_instance(np.diag([0.5, 0.5, 0.5]))
        assert np.array_equal(greedy_topL(inst, 2), [1.0, 1.0, 0.0])

    def test_range_check(self):
        inst = make_instance(np.diag([0.5, 0.5]))
        with pytest.raises(DomainError):
            greedy_topL(inst, 0)
        with pytest.raises(DomainError):
            greedy_topL(inst, 3)

    def test_scales_with_p_max(self):
        inst = make_instance(np.diag([0.5, 0.2]), p_max=2.5)
        assert np.array_equal(greedy_topL(inst, 1), [2.5, 0.0])
