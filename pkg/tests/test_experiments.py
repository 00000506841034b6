import numpy as np
import pytest

from linkedbayes.experiments import run_exp1, run_exp2
from linkedbayes.graph import SINGLE_CANDIDATE
from linkedbayes.synth import WorldSpec, generate_dataset, generate_world

SMALL = dict(K_int=4, K_obj=4, K_mot=4, motion_map={k: [k] for k in range(4)})


def data(seed=0, J=5, **kw):
    spec = WorldSpec(**{**SMALL, **kw})
    return spec, generate_dataset(generate_world(spec, seed), J, seed)


def test_exp1_easy_regime_is_perfect():
    _, recs = data()
    v = run_exp1(recs, {"exp1": {"init_sweeps": 30, "rounds": 10}}, 0)["variants"]
    for name in ("independent", "connected"):
        assert v[name]["object"]["accuracy"] == 1.0
        assert v[name]["motion"]["accuracy"] == 1.0
    assert v["connected"]["integration_dims"] == [4, 4]


def test_exp1_zero_rounds_matches_independent():
    _, recs = data(1)
    v = run_exp1(recs, {"exp1": {"init_sweeps": 30, "rounds": 0}}, 3)["variants"]
    a = np.array(v["independent"]["object_posterior"])
    b = np.array(v["connected"]["object_posterior"])
    assert (0.5 * np.abs(a - b).sum(1)).max() <= 0.05
    assert v["connected"]["integrated"] is None


def test_exp1_report_is_recomputable():
    from linkedbayes.metrics import matched_accuracy
    _, recs = data(2)
    r = run_exp1(recs, {"exp1": {"init_sweeps": 10, "rounds": 2}}, 0)
    obj = r["variants"]["connected"]["object"]
    assert matched_accuracy(r["labels"]["object"], obj["predictions"])[0] == obj["accuracy"]


def test_exp1_rejects_unknown_settings():
    _, recs = data()
    with pytest.raises(ValueError):
        run_exp1(recs, {"exp1": {"roundz": 3}}, 0)
    with pytest.raises(ValueError):
        run_exp1([], {}, 0)


def test_exp2_single_candidate_flag():
    spec, recs = data(J=3, channel={"p_sub": 0.1, "p_del": 0.0, "p_ins": 0.0})
    r = run_exp2(recs, {"world": spec.to_dict(), "exp2": {"L": 1, "beam": 4, "outer": 2, "sweeps": 10,
                                                          "seg_iters": 3}}, 0)
    b = r["variants"]["b"]
    assert any(f.endswith(SINGLE_CANDIDATE) for f in b["flags"])
    assert len(b["selected_scores"]) == 2 and len(b["words"]) == len(recs)


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="noise-free fixture settles in a shared mis-segmentation mode; see ledger")
def test_exp2_easy_regime_segmentation():
    spec = WorldSpec(K_int=5, K_obj=5, K_mot=5, motion_map={k: [k] for k in range(5)})
    recs = generate_dataset(generate_world(spec, 0), 10, 100)
    b = run_exp2(recs, {"world": spec.to_dict(), "exp2": {"beam": 16}}, 0)["variants"]["b"]
    assert b["phoneme_accuracy"] == 1.0
    assert b["segmentation"]["f_measure"] >= 0.95
