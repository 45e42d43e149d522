import json

import numpy as np
import pytest
from scipy.stats import hypergeom

from salsa.config import RunConfig, config_from_dict
from salsa.driver import (
    RunAborted,
    build_objective,
    initial_sample,
    run,
    run_pool_al,
    run_random_baseline,
    run_salsa,
    run_tabular_ts,
    strip_volatile,
)
from salsa.oracle import BudgetExhausted, Objective, ScoreLedger
from salsa.space import Candidate, generate_space

FAST = {"regressor": {"hidden_width": 32, "max_epochs": 15}}


def cfg(**kw) -> RunConfig:
    data = {"space": {"sizes": [20, 20], "dim": 4, "seed": 1}, "surrogate": FAST, "batch_size": 20,
            "n_rounds": 3, "recall_k": 20}
    for k, v in kw.items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k] = {**data[k], **v}
        else:
            data[k] = v
    return config_from_dict(data)


def _jsonable(records):
    return json.loads(json.dumps(strip_volatile(records)))


def test_initial_sample_distinct_and_deterministic():
    space = generate_space([7, 5], dim=2, seed=0)
    a = initial_sample(space, 20, seed=3)
    assert len(set(a)) == 20 and a == initial_sample(space, 20, seed=3)
    assert len(initial_sample(space, 100, seed=3)) == 35


def test_single_round_is_random_screen_without_training():
    result = run_salsa(cfg(n_rounds=1))
    (rec,) = result.records
    assert rec["n_acquired"] == 20 and rec["forward_passes"] == 0 and rec["training"] == []
    assert rec["timing"]["training"] == 0.0


def test_tiny_space_converges():
    result = run_salsa(cfg(space={"sizes": [5, 5]}, batch_size=10, n_rounds=10, recall_k=10,
                           strategy={"kind": "greedy"}))
    assert any(r["converged"] for r in result.records)
    assert len(result.ledger) <= 25
    assert len({c for c in result.ledger}) == len(result.ledger)


def test_forward_passes_equal_pool_total():
    result = run_salsa(cfg(space={"sizes": [20, 13, 7]}))
    for rec in result.records[:-1]:
        assert rec["forward_passes"] == 40
    assert result.records[-1]["forward_passes"] == 0


@pytest.mark.parametrize("method", ["salsa", "random", "tabular-ts", "pool-al"])
def test_budget_conservation(method):
    c = cfg(method=method, warmup_trials=1)
    result = run(c)
    assert result.ledger.total_calls <= c.budget
    cum = [r["cumulative_acquired"] for r in result.records]
    assert cum == sorted(cum)
    assert all(r["ledger_size"] == sum(x["n_acquired"] for x in result.records[: i + 1])
               for i, r in enumerate(result.records))
    best = [r["best_so_far"] for r in result.records]
    assert best == sorted(best)
    recalls = [r["recall"] for r in result.records]
    assert recalls == sorted(recalls)


def test_random_full_budget_recovers_everything():
    result = run_random_baseline(cfg(space={"sizes": [10, 10]}, batch_size=50, n_rounds=2, recall_k=30))
    assert result.final_recall == 1.0


def test_random_recall_is_hypergeometric():
    """Mean recall of uniform screening over 20 seeds matches k*budget/|space|."""
    size, budget, k = 2500, 250, 100
    space = generate_space([50, 50], dim=4, seed=0)
    c = cfg(space={"sizes": [50, 50]}, batch_size=50, n_rounds=5, recall_k=k, method="random")
    objective = build_objective(c, space)
    from salsa.driver import ground_truth_for

    truth = ground_truth_for(c, space, objective)
    hits = []
    for seed in range(20):
        res = run_random_baseline(config_from_dict({**_as_dict(c), "seed": seed}), space=space,
                                  objective=objective, truth=truth)
        hits.append(res.final_recall * k)
    dist = hypergeom(size, k, budget)
    se = dist.std() / np.sqrt(len(hits))
    assert abs(np.mean(hits) - dist.mean()) <= 3 * se


def _as_dict(c):
    from salsa.config import config_to_dict

    return config_to_dict(c)


def test_tabular_warmup_covers_every_item_outside_budget():
    c = cfg(method="tabular-ts", warmup_trials=2)
    result = run_tabular_ts(c)
    warm = result.records[0]
    assert warm["round"] == 0 and warm.get("warmup")
    counts = [np.zeros(20, int), np.zeros(20, int)]
    for idx, _, _ in warm["acquired"]:
        for v, i in enumerate(idx):
            counts[v][i] += 1
    assert all((cnt >= 2).all() for cnt in counts)
    assert result.ledger.unbudgeted_calls == warm["n_acquired"] == 80
    assert result.ledger.total_calls == sum(r["n_acquired"] for r in result.records[1:])


def test_tabular_rejects_oversized_warmup():
    with pytest.raises(ValueError):
        run_tabular_ts(cfg(method="tabular-ts", space={"sizes": [3, 3]}, warmup_trials=2))


def test_tabular_exact_observations_rank_by_observed_mean():
    c = cfg(method="tabular-ts", warmup_trials=2, tabular_obs_var=1e-12, n_rounds=1)
    result = run_tabular_ts(c)
    models = result.extras["models"]
    warm = [(Candidate(tuple(i)), s) for i, _, s in result.records[0]["acquired"]]
    for v in range(2):
        for item in range(20):
            ys = [s for cand, s in warm if cand.indices[v] == item]
            assert models[v].mean[item] == pytest.approx(np.mean(ys), abs=1e-6)
    best = tuple(int(np.argmax(m.mean)) for m in models)
    # the round-1 draws all land on the best observed item of each vector
    assert all(tuple(i) == best for i, _, _ in result.records[1]["acquired"])


def test_pool_al_determinism_and_inference_count():
    c = cfg(method="pool-al")
    a, b = run_pool_al(c), run_pool_al(c)
    assert _jsonable(a.records) == _jsonable(b.records)
    seen = 0
    for rec in a.records[:-1]:
        seen += rec["n_acquired"]
        assert rec["forward_passes"] == 400 - seen


def test_pool_al_whole_space_batch():
    result = run_pool_al(cfg(method="pool-al", space={"sizes": [6, 5]}, batch_size=40, n_rounds=2))
    assert result.records[0]["recall"] == 1.0


@pytest.mark.parametrize("method", ["salsa", "tabular-ts"])
def test_same_seed_same_run(method):
    c = cfg(method=method, warmup_trials=1)
    assert _jsonable(run(c).records) == _jsonable(run(c).records)


def test_checkpoint_replay(tmp_path):
    c = cfg(n_rounds=4)
    full = run_salsa(c, out_dir=tmp_path / "full")
    ck = tmp_path / "full" / "checkpoints" / "round_002.json"
    assert ck.exists() and (tmp_path / "full" / "checkpoints" / "model_round_002.npz").exists()
    resumed = run_salsa(c, out_dir=tmp_path / "resumed", resume_from=ck)
    assert _jsonable(resumed.records) == _jsonable(full.records)
    assert resumed.ledger.scores == full.ledger.scores


def test_output_files(tmp_path):
    run_salsa(cfg(), out_dir=tmp_path)
    for name in ("config.resolved.yaml", "records.jsonl", "recall_curve.tsv", "timing.tsv",
                 "topk_by_round.tsv", "final_topk.tsv", "summary.json"):
        assert (tmp_path / name).exists(), name
    assert len((tmp_path / "records.jsonl").read_text().splitlines()) == 3


class _Failing(Objective):
    def __init__(self, inner, fail_after):
        super().__init__()
        self.inner, self.fail_after = inner, fail_after

    def evaluate(self, index_rows):
        if self.calls >= self.fail_after:
            raise BudgetExhausted("scorer refused")
        return self.inner.evaluate(index_rows)


def test_objective_failure_aborts_with_partial_outputs(tmp_path):
    c = cfg()
    space = generate_space([20, 20], dim=4, seed=1)
    bad = _Failing(build_objective(c, space), fail_after=20)
    with pytest.raises(RunAborted) as info:
        run_salsa(c, out_dir=tmp_path, space=space, objective=bad)
    assert len(info.value.records) == 1
    assert (tmp_path / "summary.json").exists()


def test_salsa_beats_random_on_small_additive():
    c = cfg(space={"sizes": [40, 40]}, batch_size=40, n_rounds=5, recall_k=40)
    s = run_salsa(c).final_recall
    r = run_random_baseline(c).final_recall
    assert s > r
