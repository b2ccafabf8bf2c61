import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fairmip import forest
from fairmip.dataset import BatchSpec, inject_missingness, sample_batch, scale_unit_interval
from fairmip.errors import DataError, SchemaError
from fairmip.forest import (EvalReport, ForestModel, TrainConfig, batch_seed, evaluate,
                            predict_majority, sweep_lambda, train, write_tradeoff_csv)
from fairmip.metrics import evaluation_report, fairness_value
from fairmip.mip_model import ModelConfig
from fairmip.synthetic import MISSINGNESS, load_bundled
from fairmip.tree_solver import Branch, MiaTree, SolverConfig, predict, solve

from conftest import make_ds


@pytest.fixture(scope="module")
def data():
    ds = load_bundled().take(np.arange(600))
    return scale_unit_interval(inject_missingness(ds, MISSINGNESS, 0))


def stump(threshold, leaves, feature=0):
    return MiaTree(1, (Branch(feature, threshold, False),), leaves)


def hand_model(trees, d=1, lam=0.0):
    cfg = TrainConfig(n_tree=len(trees), depth=trees[0].depth, lam=lam)
    return ForestModel(tuple(trees), cfg, None, tuple(f"x{j}" for j in range(d)))


QUICK = dict(t_limit=math.inf, node_limit=400, batch_size=60, depth=2)


class TestVote:
    ds = make_ds([0.1, 0.4, 0.7, 0.9], [0, 1, 0, 1], [0, 1, 0, 1])

    def test_two_to_one(self):
        m = hand_model([stump(0.5, (0, 1)), stump(0.5, (0, 1)), stump(0.5, (1, 0))])
        assert predict_majority(m, self.ds).tolist() == [0, 0, 1, 1]

    def test_tie_goes_to_one(self):
        m = hand_model([stump(0.5, (0, 1)), stump(0.5, (1, 0))])
        assert predict_majority(m, self.ds).tolist() == [1, 1, 1, 1]

    def test_single_tree(self):
        t = stump(0.3, (1, 0))
        assert predict_majority(hand_model([t]), self.ds).tolist() == predict(t, self.ds).tolist()

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        trees = [stump(float(rng.choice([0.2, 0.5, 0.8])), tuple(rng.integers(0, 2, 2)))
                 for _ in range(7)]
        base = predict_majority(hand_model(trees), self.ds)
        for _ in range(5):
            perm = rng.permutation(len(trees))
            shuffled = hand_model([trees[k] for k in perm])
            assert np.array_equal(predict_majority(shuffled, self.ds), base)

    def test_dimension_mismatch(self):
        m = hand_model([stump(0.5, (0, 1))], d=2)
        with pytest.raises(DataError):
            predict_majority(m, self.ds)


class TestEvaluate:
    def test_hand_built_report(self):
        ds = make_ds([0.1, 0.9, 0.2, 0.8, 0.7], [1, 1, 0, 1, 0], [0, 0, 0, 1, 1])
        m = hand_model([stump(0.5, (0, 1))], lam=1.0)
        rep = evaluate(m, ds)
        expected = evaluation_report([0, 1, 0, 1, 1], ds.labels, ds.groups)
        assert rep.accuracy == expected["accuracy"] == 0.6
        assert rep.metrics == expected["metrics"]
        assert rep.metrics["fnr"] == 0.5 and rep.metrics["fpr"] == 1.0 and rep.metrics["eo"] == 1.5
        assert rep.groups == expected["groups"]
        assert rep.tree_objectives == [pytest.approx(0.4 + 0.5)]

    def test_perfect_forest(self):
        ds = make_ds([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], [0, 1, 0, 1])
        rep = evaluate(hand_model([stump(0.5, (0, 1))]), ds)
        assert rep.accuracy == 1 and all(v == 0 for v in rep.metrics.values())

    def test_constant_one(self):
        ds = make_ds([0.1, 0.2, 0.8, 0.9], [0, 1, 0, 1], [0, 0, 1, 1])
        rep = evaluate(hand_model([stump(0.5, (1, 1))]), ds)
        assert rep.groups["0"]["fnr"] == rep.groups["1"]["fnr"] == 0
        assert rep.groups["0"]["fpr"] == rep.groups["1"]["fpr"] == 1
        assert rep.metrics["fpr"] == 0 and rep.metrics["fnr"] == 0

    def test_single_group(self):
        ds = make_ds([0.1, 0.2], [0, 1], [0, 0])
        with pytest.raises(DataError):
            evaluate(hand_model([stump(0.5, (0, 1))]), ds)


class TestTrain:
    def test_warm_start_contract(self, data):
        seen = []

        def spy(batch, scfg, mcfg, warm):
            res = solve(batch, scfg, mcfg, warm)
            seen.append((warm, res.tree))
            return res

        log = []
        m = train(data, TrainConfig(n_tree=4, lam=0.5, **QUICK), solver=spy, log=log)
        assert seen[0][0] is None
        for i in range(1, 4):
            assert seen[i][0] is seen[i - 1][1]
        assert list(m.trees) == [t for _, t in seen]
        assert [e["warm_start"] for e in log] == [False, True, True, True]
        assert [e["batch_seed"] for e in log] == [batch_seed(0, i) for i in range(4)]

    def test_deterministic(self, data):
        cfg = TrainConfig(n_tree=3, lam=1.0, seed=9, **QUICK)
        assert forest.dumps(train(data, cfg)) == forest.dumps(train(data, cfg))

    def test_single_exact_tree(self, data):
        cfg = TrainConfig(n_tree=1, depth=1, batch_size=40, t_limit=math.inf, lam=0.5)
        m = train(data, cfg)
        batch = sample_batch(data, BatchSpec(40, batch_seed(0, 0)))
        res = solve(batch, SolverConfig(t_limit=math.inf), cfg.model_config())
        assert res.proven_optimal and m.trees == (res.tree,)

    def test_batch_clamped(self, data):
        small = data.take(np.arange(30))
        m = train(small, TrainConfig(n_tree=1, depth=1, batch_size=200, t_limit=math.inf))
        assert len(m.trees) == 1

    def test_requires_scaled(self):
        ds = load_bundled().take(np.arange(50))
        with pytest.raises(DataError):
            train(ds, TrainConfig(n_tree=1))

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.depth, cfg.n_tree, cfg.t_limit, cfg.batch_size) == (3, 30, 60.0, 200)
        assert TrainConfig.from_json(cfg.to_json()) == cfg
        inf = TrainConfig(t_limit=math.inf)
        assert inf.to_json()["t_limit"] is None
        assert TrainConfig.from_json(inf.to_json()) == inf
        with pytest.raises(ValueError):
            TrainConfig(n_tree=0)
        with pytest.raises(ValueError):
            TrainConfig(lam=-1)

    def test_lambda_lowers_batch_fairness(self, data):
        """Exact solves on shared batches: the fairness term never grows with lambda."""
        for i in range(6):
            batch = sample_batch(data, BatchSpec(40, batch_seed(3, i)))
            fair = []
            for lam in (0.0, 2.0):
                res = solve(batch, SolverConfig(t_limit=math.inf), ModelConfig(2, lam, "fnr"))
                assert res.proven_optimal
                fair.append(fairness_value("fnr", predict(res.tree, batch), batch.labels,
                                           batch.groups))
            assert fair[1] <= fair[0] + 1e-12


class TestPersistence:
    def test_round_trip(self, data, tmp_path):
        m = train(data, TrainConfig(n_tree=3, lam=0.5, **QUICK))
        forest.save(m, tmp_path / "m.json")
        back = forest.load(tmp_path / "m.json")
        assert back == m
        assert np.array_equal(predict_majority(back, data), predict_majority(m, data))
        assert forest.dumps(back) == (tmp_path / "m.json").read_text()

    def test_unscaled_input_uses_model_scaling(self, data):
        m = train(data, TrainConfig(n_tree=2, **QUICK))
        raw = inject_missingness(load_bundled().take(np.arange(600)), MISSINGNESS, 0)
        assert np.array_equal(predict_majority(m, raw), predict_majority(m, data))

    def test_wrong_schema_version(self, tmp_path):
        doc = hand_model([stump(0.5, (0, 1))]).to_json()
        doc["schema_version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError):
            forest.load(tmp_path / "m.json")
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(SchemaError):
            forest.load(tmp_path / "bad.json")

    def test_fresh_process_reproduces_report(self, data, tmp_path):
        m = train(data, TrainConfig(n_tree=3, lam=0.5, **QUICK))
        forest.save(m, tmp_path / "m.json")
        here = json.dumps(evaluate(m, data).to_json(), sort_keys=True)
        code = (
            "import json, sys, numpy as np\n"
            "from fairmip import forest\n"
            "from fairmip.dataset import inject_missingness, scale_unit_interval\n"
            "from fairmip.synthetic import MISSINGNESS, load_bundled\n"
            "ds = load_bundled().take(np.arange(600))\n"
            "ds = scale_unit_interval(inject_missingness(ds, MISSINGNESS, 0))\n"
            "m = forest.load(sys.argv[1])\n"
            "print(json.dumps(forest.evaluate(m, ds).to_json(), sort_keys=True))\n")
        out = subprocess.run([sys.executable, "-c", code, str(tmp_path / "m.json")],
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == here

    def test_eval_report_json(self):
        rep = EvalReport(0.5, {}, {"fnr": 0.1}, [0.2], 4)
        assert rep.to_json() == {"accuracy": 0.5, "groups": {}, "metrics": {"fnr": 0.1},
                                 "tree_objectives": [0.2], "n": 4}


class TestSweep:
    def test_rows(self, data, tmp_path):
        cfg = TrainConfig(n_tree=1, depth=1, batch_size=30, t_limit=math.inf)
        rows = sweep_lambda(data, cfg, [0.5, 0.0], repeats=2)
        assert [r["lambda"] for r in rows] == [0.0, 0.5]
        for r in rows:
            assert r["metric"] == "fnr" and len(r["per_split"]) == 2
            assert 0 <= r["accuracy"] <= 1 and r["accuracy_se"] >= 0
            assert r["metric_value"] == pytest.approx(np.mean([b for _, b in r["per_split"]]))
        write_tradeoff_csv(rows, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "lambda,accuracy,accuracy_se,metric,metric_value,metric_se"
        assert len(lines) == 3

    def test_baseline_only_and_three_point_grid(self, data):
        cfg = TrainConfig(n_tree=1, depth=1, batch_size=20, t_limit=math.inf)
        assert len(sweep_lambda(data, cfg, [0], repeats=1)) == 1
        rows = sweep_lambda(data, cfg, [0.1, 0.5, 1.0], repeats=1)
        assert [r["lambda"] for r in rows] == [0.1, 0.5, 1.0]

    def test_repetitions_use_distinct_splits(self):
        assert len({batch_seed(0, 10_000 + r) for r in range(10)}) == 10

    def test_bad_arguments(self, data):
        cfg = TrainConfig(n_tree=1, depth=1, batch_size=20)
        with pytest.raises(ValueError):
            sweep_lambda(data, cfg, [])
        with pytest.raises(ValueError):
            sweep_lambda(data, cfg, [-1.0])
        with pytest.raises(ValueError):
            sweep_lambda(data, cfg, [0.0], repeats=0)
