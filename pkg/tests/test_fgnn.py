import json

import numpy as np
import pytest

import fdpower.autodiff as ad
from fdpower.autodiff import load_checkpoint, make_param_vars, save_checkpoint
from fdpower.errors import ConfigError, TrainingDivergedError
from fdpower.fgnn import (
    FgnnConfig,
    evaluate,
    forward,
    init_params,
    loss,
    pack_batch,
    train,
    _forward_traced,
)
from fdpower.graphrep import build_pair_graph, permute_vertices, truncate_edges
from fdpower.netgen import ExperimentConfig, generate_dataset, sample_instance
from fdpower.phy import weighted_sum_rate

TINY = FgnnConfig(fa_widths=(8, 3, 2), fc_widths=(6, 3, 1), num_mp_layers=2)


def dataset(k=6, fd=0.5, n=4, seed=0, **kw):
    cfg = ExperimentConfig(num_links=k, fd_fraction=fd, **kw)
    insts = generate_dataset(cfg, n, seed)
    return [(inst, build_pair_graph(inst)) for inst in insts]


def reference_forward(inst, cfg, store):
    """Slow, loop-based transliteration of the layer update rule.

    Built straight from the instance matrices, independent of the graph and
    packing machinery, with neighbor sums in ascending vertex index.
    """
    def mlp(prefix, spec, x):
        n_layers = len(spec.layer_widths) - 1
        for i in range(n_layers):
            x = x @ store.params[f"{prefix}.W{i}"] + store.params[f"{prefix}.b{i}"][0]
            if i < n_layers - 1:
                x = np.maximum(x, 0.0)
            elif spec.output_activation == "logistic":
                x = 1.0 / (1.0 + np.exp(-x))
        return x

    c = inst.config
    k = c.num_links
    gains = inst.gain_matrix()
    scale = c.area_side if cfg.scale_distances else 1.0
    gamma2_max = c.si_eta * c.p_max**c.si_lambda

    def vertex_feat(v):
        d = c.antenna_dist if inst.is_fd[v] else inst.dist[v, v]
        return np.array([gains[v, v], inst.weights[v], d / scale])

    def edge_feat(dst, src):
        if inst.is_fd[dst] and inst.fd_partner[dst] == src:
            return np.array([gamma2_max, gamma2_max,
                             c.antenna_dist / scale, c.antenna_dist / scale])
        return np.array([gains[src, dst], gains[dst, src],
                         inst.dist[src, dst] / scale, inst.dist[dst, src] / scale])

    p = np.full(k, c.p_max)
    for fa, fc in cfg.layer_prefixes():
        m = [np.concatenate([vertex_feat(v), [p[v]]]) for v in range(k)]
        p_new = np.empty(k)
        for v in range(k):
            alpha = np.zeros(cfg.fa_widths[-1])
            for u in range(k):
                if u == v:
                    continue
                alpha = alpha + mlp(fa, cfg.fa_spec(), np.concatenate([m[u], edge_feat(v, u)]))
            p_new[v] = c.p_max * mlp(fc, cfg.fc_spec(), np.concatenate([alpha, m[v]]))[0]
        p = p_new
    return p


class TestForward:
    def test_isolated_vertex(self):
        inst = sample_instance(ExperimentConfig(num_links=1, fd_fraction=0.0), 3)
        g = build_pair_graph(inst)
        cfg = FgnnConfig()
        store = init_params(cfg, 0)
        p = forward(g, store, cfg)
        assert p.shape == (1,)
        assert 0.0 < p[0] < 1.0

    def test_output_in_box_untrained(self):
        for seed in range(3):
            inst = sample_instance(ExperimentConfig(num_links=12, fd_fraction=0.5), seed)
            g = build_pair_graph(inst)
            cfg = FgnnConfig()
            p = forward(g, init_params(cfg, seed), cfg)
            assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_matches_reference_implementation(self):
        cfg = TINY
        store = init_params(cfg, 5)
        for seed in range(3):
            inst = sample_instance(ExperimentConfig(num_links=3, fd_fraction=2 / 3), seed)
            g = build_pair_graph(inst)
            got = forward(g, store, cfg)
            want = reference_forward(inst, cfg, store)
            assert np.allclose(got, want, rtol=1e-10, atol=1e-14)

    def test_matches_reference_full_widths(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 1)
        inst = sample_instance(ExperimentConfig(num_links=5, fd_fraction=0.4), 11)
        got = forward(build_pair_graph(inst), store, cfg)
        want = reference_forward(inst, cfg, store)
        assert np.allclose(got, want, rtol=1e-10, atol=1e-14)

    def test_traced_equals_fast_bitwise(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 2)
        inst = sample_instance(ExperimentConfig(num_links=10, fd_fraction=0.5), 4)
        packed = pack_batch([(inst, build_pair_graph(inst))], cfg)
        fast = forward(build_pair_graph(inst), store, cfg)
        traced = _forward_traced(packed, make_param_vars(store), cfg)
        assert np.array_equal(fast, traced.value[:, 0])

    def test_permutation_equivariance_bitwise(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 3)
        inst = sample_instance(ExperimentConfig(num_links=20, fd_fraction=0.5), 8)
        g = build_pair_graph(inst)
        base = forward(g, store, cfg)
        rng = np.random.default_rng(0)
        for _ in range(20):
            perm = rng.permutation(20)
            out = forward(permute_vertices(g, perm), store, cfg)
            assert np.array_equal(out[perm], base)

    def test_truncation_beyond_diameter_identical(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 4)
        inst = sample_instance(ExperimentConfig(num_links=8, fd_fraction=0.5), 6)
        g = build_pair_graph(inst)
        gt = truncate_edges(g, g.area_side * np.sqrt(2.0))
        assert np.array_equal(forward(g, store, cfg), forward(gt, store, cfg))

    def test_same_params_any_size(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 5)
        for k in (2, 7, 13):
            inst = sample_instance(ExperimentConfig(num_links=k, fd_fraction=0.0), k)
            assert forward(build_pair_graph(inst), store, cfg).shape == (k,)

    def test_width_arithmetic_enforced(self):
        with pytest.raises(ConfigError):
            FgnnConfig(fa_widths=(9, 16, 32)).validate()
        with pytest.raises(ConfigError):
            FgnnConfig(fc_widths=(35, 16, 1)).validate()
        with pytest.raises(ConfigError):
            FgnnConfig(fc_widths=(36, 16, 2)).validate()


class TestLoss:
    def test_batch_of_one_reduces_to_objective(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 6)
        inst = sample_instance(ExperimentConfig(num_links=6, fd_fraction=0.5), 9)
        g = build_pair_graph(inst)
        lv = loss([(inst, g)], make_param_vars(store), cfg)
        direct = -weighted_sum_rate(inst, forward(g, store, cfg))
        assert float(lv.value) == pytest.approx(direct, rel=1e-12)

    def test_batch_mean(self):
        cfg = FgnnConfig()
        store = init_params(cfg, 7)
        data = dataset(k=5, n=3, seed=2)
        lv = loss(data, make_param_vars(store), cfg)
        singles = [float(loss([d], make_param_vars(store), cfg).value) for d in data]
        assert float(lv.value) == pytest.approx(np.mean(singles), rel=1e-12)

    def test_near_zero_powers_near_zero_loss(self):
        cfg = TINY
        store = init_params(cfg, 0)
        # Slam the combiner's output bias low: logistic -> ~0 power.
        store.params["fc.b1"] = np.array([[-200.0]])
        data = dataset(k=4, n=2, seed=3)
        lv = loss(data, make_param_vars(store), cfg)
        assert abs(float(lv.value)) < 1e-12

    def test_gradient_matches_finite_differences_fd_instance(self):
        # End-to-end: loss -> layers -> SINR with the partner-power SI term.
        cfg = TINY
        store = init_params(cfg, 8)
        inst = sample_instance(ExperimentConfig(num_links=4, fd_fraction=0.5), 12)
        g = build_pair_graph(inst)
        packed = pack_batch([(inst, g)], cfg)

        pvars = make_param_vars(store)
        lv = loss(packed, pvars, cfg)
        lv.backward()

        h = 1e-5
        worst = 0.0
        for name, val in store.params.items():
            it = np.nditer(val, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                saved = val[idx]
                val[idx] = saved + h
                up = float(loss(packed, make_param_vars(store), cfg).value)
                val[idx] = saved - h
                dn = float(loss(packed, make_param_vars(store), cfg).value)
                val[idx] = saved
                fd = (up - dn) / (2 * h)
                adg = pvars[name].grad[idx]
                worst = max(worst, abs(fd - adg) / max(abs(fd), abs(adg), 1e-5))
        assert worst < 1e-4


class TestTraining:
    def test_smoke_loss_decreases(self, tmp_path):
        cfg = FgnnConfig(batch_size=8, epochs=4, early_stop_patience=None)
        data = dataset(k=6, n=24, seed=4, noise_var=1e-4)
        log = tmp_path / "train.jsonl"
        store = train(data, cfg, seed=0, log_path=log)
        lines = [json.loads(x) for x in log.read_text().splitlines()]
        assert len(lines) == 4
        losses = [x["mean_loss"] for x in lines]
        assert losses[-1] < losses[0]
        p = forward(data[0][1], store, cfg)
        assert np.all((p > 0) & (p < 1))

    def test_resume_reproduces_next_step(self, tmp_path):
        cfg = FgnnConfig(batch_size=8, epochs=2, early_stop_patience=None)
        data = dataset(k=5, n=16, seed=5)
        store = train(data, cfg, seed=1)
        ck = tmp_path / "ck.npz"
        save_checkpoint(store, ck)

        one_more = FgnnConfig(batch_size=8, epochs=1, early_stop_patience=None)
        logs = []
        for trial in range(2):
            base, _ = load_checkpoint(ck)
            log = tmp_path / f"resume{trial}.jsonl"
            train(data, one_more, seed=1, init_store=base, log_path=log)
            logs.append(log.read_text())
        assert json.loads(logs[0])["mean_loss"] == json.loads(logs[1])["mean_loss"]

    def test_training_deterministic(self):
        cfg = FgnnConfig(batch_size=4, epochs=2, early_stop_patience=None)
        data = dataset(k=4, n=8, seed=6)
        s1 = train(data, cfg, seed=3)
        s2 = train(data, cfg, seed=3)
        assert all(np.array_equal(s1.params[k], s2.params[k]) for k in s1.params)

    def test_divergence_detected(self):
        cfg = FgnnConfig(batch_size=4, epochs=1)
        data = dataset(k=4, n=4, seed=7)
        store = init_params(cfg, 0)
        store.params["fa.W0"][:] = np.nan
        with pytest.raises(TrainingDivergedError):
            train(data, cfg, seed=0, init_store=store)

    def test_empty_train_set_rejected(self):
        with pytest.raises(ConfigError):
            train([], FgnnConfig(), seed=0)


class TestEvaluate:
    def test_wmmse_self_ratio_is_one(self):
        from fdpower.baselines import greedy_topL, wmmse

        cfg = FgnnConfig()
        store = init_params(cfg, 9)
        data = dataset(k=6, n=5, seed=8)
        powers = {
            "wmmse": [wmmse(inst) for inst, _ in data],
            "greedy": [greedy_topL(inst, 3) for inst, _ in data],
        }
        report = evaluate(store, cfg, data, powers)
        assert report.ratio_vs_wmmse["wmmse"] == pytest.approx(1.0)
        assert report.num_instances == 5
        assert set(report.mean_sum_rate) == {"fgnn", "wmmse", "greedy"}
        assert report.per_instance_rates["fgnn"].shape == (5,)

    def test_requires_wmmse_column(self):
        cfg = FgnnConfig()
        data = dataset(k=4, n=2, seed=9)
        with pytest.raises(ConfigError):
            evaluate(init_params(cfg, 0), cfg, data, {"greedy": [np.zeros(4)] * 2})

    def test_empty_test_set(self):
        with pytest.raises(ConfigError):
            evaluate(init_params(FgnnConfig(), 0), FgnnConfig(), [], {"wmmse": []})
