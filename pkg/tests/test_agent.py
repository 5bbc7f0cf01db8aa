import numpy as np
import pytest

from sentinel import synth
from sentinel.agent import (Action, AgentError, AnomalyAgent, ClassifierAgent, Directive,
                            NmfAgent, NoDataError, make_agent)
from sentinel.core import Quality, Status
from sentinel.nmf import NmfConfig


def alarm_bundles(pipeline, bench, count):
    out = [b for b in bench.items if b.label is Status.ANOMALOUS
           and pipeline.score_bundle(b) > pipeline.threshold]
    assert len(out) >= count
    return out[:count]


def normal_bundles(pipeline, bench, count):
    out = [b for b in bench.items if b.label is Status.NORMAL
           and pipeline.score_bundle(b) <= pipeline.threshold]
    return out[:count]


@pytest.fixture
def ramp():
    return synth.gen_ramp(synth.RampSpec(), 0)[0]


def test_fresh_agent(ee_pipeline):
    a = AnomalyAgent(ee_pipeline)
    assert a.ask() == Directive(Action.CONTINUE)
    with pytest.raises(NoDataError):
        a.report()


def test_type_mismatch(ee_pipeline, ramp):
    with pytest.raises(TypeError):
        AnomalyAgent(ee_pipeline).tell(ramp[0])
    with pytest.raises(TypeError):
        NmfAgent(NmfConfig(p=2)).tell(np.zeros(10))


def test_report_is_idempotent_except_sequence(ee_pipeline, xpcs_bench):
    a = AnomalyAgent(ee_pipeline)
    a.tell(xpcs_bench.items[0])
    r1, r2 = a.report(), a.report()
    assert r1.payload == r2.payload
    assert (r1.sequence_number, r2.sequence_number) == (1, 2)


def test_nmf_agent_shapes(ramp):
    a = NmfAgent(NmfConfig(p=3, max_iter=100))
    for s in ramp[:50]:
        a.tell(s)
    p = a.report().payload
    assert len(p["components"]) == 3
    assert len(p["weights"]) == 50 and len(p["weights"][0]) == 3
    assert a.ask().action is Action.CONTINUE


def test_anomaly_score_matches_pipeline(ee_pipeline, xpcs_bench):
    a = AnomalyAgent(ee_pipeline)
    for b in xpcs_bench.items[::37]:
        a.tell(b)
        assert abs(a.report().payload["score"] - ee_pipeline.score_bundle(b)) <= 1e-12


def test_pause_after_consecutive_alarms(ee_pipeline, xpcs_bench):
    bad = alarm_bundles(ee_pipeline, xpcs_bench, 3)
    good = normal_bundles(ee_pipeline, xpcs_bench, 1)[0]
    a = AnomalyAgent(ee_pipeline, pause_after=3)
    a.tell(bad[0])
    d = a.ask()
    assert d.action is Action.ALERT and bad[0].id in d.reason
    assert a.report().status == "alarm"
    a.tell(bad[1])
    assert a.ask().action is Action.ALERT
    a.tell(bad[2])
    d = a.ask()
    assert d.action is Action.PAUSE
    assert all(b.id in d.reason for b in bad)
    a.tell(good)
    assert a.ask().action is Action.CONTINUE
    assert a.report().status == "ok"


def test_streak_resets(ee_pipeline, xpcs_bench):
    bad = alarm_bundles(ee_pipeline, xpcs_bench, 3)
    good = normal_bundles(ee_pipeline, xpcs_bench, 1)[0]
    a = AnomalyAgent(ee_pipeline, pause_after=3)
    for b in (bad[0], bad[1], good, bad[2]):
        a.tell(b)
    assert a.ask().action is Action.ALERT


def test_classifier_agent(knn_classifier, xafs_bench):
    bad = next(s for s in xafs_bench.items if s.label is Quality.BAD
               and knn_classifier.classify(s)[0] is Quality.BAD)
    good = next(s for s in xafs_bench.items if s.label is Quality.GOOD
                and knn_classifier.classify(s)[0] is Quality.GOOD)
    a = ClassifierAgent(knn_classifier)
    a.tell(bad)
    assert a.ask().action is Action.ALERT
    assert a.report().payload["label"] == Quality.BAD.value
    a.tell(good)
    assert a.ask().action is Action.CONTINUE


def test_ask_has_no_side_effects(ee_pipeline, xpcs_bench):
    a = AnomalyAgent(ee_pipeline)
    a.tell(alarm_bundles(ee_pipeline, xpcs_bench, 1)[0])
    first = a.ask()
    assert all(a.ask() == first for _ in range(5))
    assert a.n_told == 1
    assert a.report().sequence_number == 1


def test_directive_validation():
    with pytest.raises(ValueError):
        Directive(Action.PAUSE)
    with pytest.raises(ValueError):
        Directive("Stop", "why")
    assert Directive("Alert", "x").action is Action.ALERT
    assert Directive(Action.CONTINUE).to_json() == {"action": "Continue", "reason": ""}


def test_make_agent(ee_pipeline):
    assert isinstance(make_agent("anomaly", ee_pipeline, pause_after=2), AnomalyAgent)
    with pytest.raises(AgentError):
        make_agent("psychic", None)
    with pytest.raises(ValueError):
        AnomalyAgent(ee_pipeline, pause_after=0)


def test_report_summary(ee_pipeline, xpcs_bench):
    a = AnomalyAgent(ee_pipeline)
    a.tell(xpcs_bench.items[0])
    r = a.report()
    assert xpcs_bench.items[0].id in r.summary()
    assert r.to_json()["payload"] == r.payload
