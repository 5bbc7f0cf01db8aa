"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in an
"acceptance criteria" section of the terminal summary.
"""
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from oracles import eigen_oracle, lof_oracle, peaked_factors, tally
from sentinel import synth
from sentinel.agent import AnomalyAgent
from sentinel.anomaly import (c_factor, ee_fit, ee_predict, evaluate_detectors, fit_pipeline,
                              iforest_fit, iforest_score, lof_fit, lof_score,
                              robust_location_scatter)
from sentinel.classify import bce_gradient, bce_loss, eval_suite, mlp_init, train_classifier
from sentinel.core import (Status, UndefinedMetricError, accuracy, confusion, f1, fdr,
                           precision, recall, split_anomaly, split_uniform, split_unique,
                           write_jsonl)
from sentinel.ingest import (ArtifactError, DocumentProtocolError, DocumentStream,
                             MemorySink, RetryPolicy, WatchConfig, Watcher, WebhookSink,
                             load_model, save_model)
from sentinel.nmf import dominant_switches, nmf_fit, nmf_report, nmf_transform
from sentinel.pca import pca_fit


# 1 ------------------------------------------------------------------------------------

def test_c01_nmf_correctness(criterion):
    with criterion(1, "NMF exact rank-p recovery") as info:
        for p in (1, 2, 4):
            W, H = peaked_factors(60, 300, p, seed=p)
            V = W @ H
            t0 = time.perf_counter()
            m = nmf_fit(V, p, max_iter=5000, tol=1e-12, seed=0)
            elapsed = time.perf_counter() - t0
            err = np.linalg.norm(V - m.W @ m.H) / np.linalg.norm(V)
            trace = np.asarray(m.objective_trace)
            assert err <= 1e-3, f"p={p}: relative error {err:.2e}"
            assert np.all(trace[1:] <= trace[:-1] * (1 + 1e-10)), f"p={p}: objective rose"
            assert np.all(m.W >= 0) and np.all(m.H >= 0)
            assert elapsed < 5, f"p={p}: {elapsed:.1f} s"
            info[f"err_p{p}"] = f"{err:.1e}"


# 2 ------------------------------------------------------------------------------------

def test_c02_phase_transition(criterion):
    with criterion(2, "NMF phase-transition temperature") as info:
        spec = synth.RampSpec()
        temps = np.asarray(spec.temperatures)
        step = temps[1] - temps[0]
        found = []
        for seed in range(5):
            spectra, _ = synth.gen_ramp(spec, seed)
            V = np.array([s.intensity for s in spectra])
            m = nmf_fit(V, len(spec.phases), max_iter=3000, tol=1e-9, seed=seed,
                        meta_values=temps.tolist(), restarts=5)
            r = nmf_report(m)
            switches = dominant_switches(r.weights, r.components)
            assert len(switches) == 1, f"seed {seed}: switches at {temps[switches]}"
            t_switch = temps[switches[0]]
            assert abs(t_switch - spec.t_c) <= step, f"seed {seed}: {t_switch} vs {spec.t_c}"
            found.append(round(float(t_switch), 1))
        info["T_switch"] = found


# 3 ------------------------------------------------------------------------------------

def test_c03_pca_oracle(criterion):
    with criterion(3, "PCA equals covariance + Jacobi oracle"):
        rng = np.random.default_rng(3)
        for _ in range(50):
            X = rng.standard_normal((20, 6)) @ rng.standard_normal((6, 6))
            m = pca_fit(X, 6)
            lam, vecs = eigen_oracle(X, 6)
            assert np.allclose(m.explained_variance, lam, atol=1e-8, rtol=0)
            cos = np.abs(np.sum(m.components * vecs, axis=1))
            assert np.all(cos >= 1 - 1e-8)


# 4 ------------------------------------------------------------------------------------

def test_c04_lof_oracle(criterion):
    with criterion(4, "LOF equals brute-force oracle") as info:
        rng = np.random.default_rng(4)
        worst = 0.0
        for trial in range(100):
            k = (2, 5, 10)[trial % 3]
            n = int(rng.integers(k + 2, 51))
            d = int(rng.integers(1, 6))
            X = rng.standard_normal((n, d))
            Q = 2 * rng.standard_normal((5, d))
            m = lof_fit(X, k, 0.1)
            tr, qs = lof_oracle(X, Q, k)
            got = np.concatenate([m.train_scores, lof_score(m, Q)])
            want = np.concatenate([tr, qs])
            rel = np.max(np.abs(got - want) / np.abs(want))
            worst = max(worst, rel)
            assert rel <= 1e-9, f"trial {trial}: relative gap {rel:.1e}"
        info["max_rel_gap"] = f"{worst:.1e}"


# 5 ------------------------------------------------------------------------------------

def test_c05_ee_calibration(criterion):
    with criterion(5, "EE contamination calibration and robustness") as info:
        rng = np.random.default_rng(5)
        A = rng.standard_normal((5, 5))
        cov = A @ A.T + 5 * np.eye(5)
        X = rng.multivariate_normal(np.zeros(5), cov, size=1000)
        for c in (0.02, 0.05, 0.1):
            flagged = ee_predict(ee_fit(X, c), X).count(Status.ANOMALOUS) / len(X)
            assert abs(flagged - c) <= 0.02, f"contamination {c}: flagged {flagged}"
            info[f"flag@{c}"] = round(flagged, 3)
        n_out = 150
        inliers = rng.multivariate_normal(np.zeros(5), cov, size=1000 - n_out)
        outliers = rng.multivariate_normal(np.full(5, 12.0), np.eye(5), size=n_out)
        Y = np.vstack([inliers, outliers])
        _, robust, _ = robust_location_scatter(Y, seed=0)
        plain = np.cov(Y, rowvar=False)
        d_robust = np.linalg.norm(robust - cov)
        d_plain = np.linalg.norm(plain - cov)
        assert d_robust < d_plain, f"robust {d_robust:.2f} vs plain {d_plain:.2f}"
        info["frob_robust"] = round(d_robust, 2)
        info["frob_plain"] = round(d_plain, 2)


# 6 ------------------------------------------------------------------------------------

def test_c06_iforest_sanity(criterion):
    with criterion(6, "iForest score range and planted outlier"):
        assert c_factor(2) == 1.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((500, 5))
            direction = rng.standard_normal(5)
            outlier = 10 * direction / np.linalg.norm(direction)
            data = np.vstack([X, outlier])
            model = iforest_fit(data, seed=seed)
            s = iforest_score(model, data)
            assert np.all((s > 0) & (s <= 1))
            assert s[-1] > np.percentile(s[:-1], 95), f"seed {seed}"


# 7 ------------------------------------------------------------------------------------

def test_c07_anomaly_benchmark(criterion, xpcs_bench):
    with criterion(7, "anomaly benchmark recall/FDR") as info:
        from sentinel.features import xpcs_matrix
        t0 = time.perf_counter()
        X = xpcs_matrix(xpcs_bench.items)
        labels = [b.label for b in xpcs_bench.items]
        evals = evaluate_detectors(X, labels, seed=0)
        elapsed = time.perf_counter() - t0
        for kind, ev in evals.items():
            info[kind] = f"R={ev.recall_anomaly:.3f}/FDR={ev.fdr:.3f}"
        ee = evals["ee"]
        assert ee.recall_anomaly >= 0.90 and ee.fdr <= 0.10
        for kind, ev in evals.items():
            assert ev.recall_anomaly >= 0.85, kind
        assert elapsed < 60, f"{elapsed:.1f} s"


# 8 ------------------------------------------------------------------------------------

def test_c08_classification_benchmark(criterion, xafs_bench):
    with criterion(8, "classification benchmark") as info:
        suite = eval_suite(xafs_bench.items, xafs_bench.holdout, seed=0)
        for model in ("RF", "MLP", "k-Neighbors"):
            row = suite.get(model, "engineered", "uniform")
            assert row.f1 >= 0.95, f"{model}: F1 {row.f1:.3f}"
        eng = suite.get("k-Neighbors", "engineered", "unique").f1
        raw = suite.get("k-Neighbors", "raw", "unique").f1
        assert eng > raw, f"kNN unique engineered {eng:.3f} vs raw {raw:.3f}"
        info["knn_unique_eng"] = round(eng, 3)
        info["knn_unique_raw"] = round(raw, 3)

        rng = np.random.default_rng(8)
        Xb, yb = rng.standard_normal((3, 6)), np.array([0.0, 1.0, 1.0])
        p = mlp_init(6, 8, rng)
        g = bce_gradient(p, Xb, yb)
        eps = 1e-5
        worst = 0.0
        for key, val in p.items():
            arr = np.atleast_1d(np.array(val, dtype=float))
            for i in np.ndindex(arr.shape):
                losses = []
                for sign in (1, -1):
                    q = {k: np.array(v, dtype=float) for k, v in p.items()}
                    qa = np.atleast_1d(q[key])
                    qa[i] += sign * eps
                    q[key] = qa if np.ndim(val) else float(qa[0])
                    losses.append(bce_loss(q, Xb, yb))
                num = (losses[0] - losses[1]) / (2 * eps)
                ana = np.atleast_1d(g[key])[i]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
        assert worst <= 1e-6, f"gradient relative gap {worst:.1e}"
        info["grad_gap"] = f"{worst:.1e}"


# 9 ------------------------------------------------------------------------------------

def test_c09_metrics_oracle(criterion):
    with criterion(9, "metrics equal counting oracle"):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            pred = rng.choice(["A", "N"], n).tolist()
            act = rng.choice(["A", "N"], n).tolist()
            tp, fp, tn, fn = tally(pred, act, "A")
            cm = confusion(pred, act, "A")
            assert (cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn)
            assert accuracy(cm) == (tp + tn) / n
            expected = {
                precision: (tp, tp + fp), recall: (tp, tp + fn), fdr: (fp, tp + fp),
                f1: (2 * tp, 2 * tp + fp + fn) if tp + fp and tp + fn else (0, 0),
            }
            for fn_, (num, den) in expected.items():
                if den == 0:
                    with pytest.raises(UndefinedMetricError):
                        fn_(cm)
                else:
                    assert fn_(cm) == num / den
            if tp + fp:
                assert fdr(cm) + precision(cm) == pytest.approx(1.0, abs=1e-15)


# 10 -----------------------------------------------------------------------------------

def test_c10_splits(criterion):
    with criterion(10, "split protocols"):
        normals, anomalies = list(range(0, 400)), list(range(400, 460))
        for seed in range(100):
            s = split_anomaly(normals, anomalies, seed)
            assert not set(s.train) & set(anomalies)
            assert sorted(s.train + s.validation + s.test) == list(range(460))
            u = split_uniform(711, 0.8, seed)
            assert sorted(u.train + u.validation) == list(range(711))
            q = split_unique(711, range(610, 711), 0.1, seed)
            assert sorted(q.train + q.validation) == list(range(711))
            assert set(range(610, 711)) <= set(q.validation)


# 11 -----------------------------------------------------------------------------------

@pytest.fixture
def flaky_webhook():
    """HTTP endpoint that answers 500 to its first two POSTs, then 200."""
    bodies: list[dict] = []
    lock = threading.Lock()
    attempts = [0]

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"]))
            with lock:
                attempts[0] += 1
                ok = attempts[0] > 2
                if ok:
                    bodies.append(json.loads(body))
            self.send_response(200 if ok else 500)
            self.end_headers()

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{server.server_address[1]}/", bodies, attempts
    server.shutdown()
    server.server_close()


def _malformed_streams(rng, n):
    """Valid three-event runs broken by one framing violation each."""
    from sentinel.core import to_record
    good = synth.gen_ramp(synth.RampSpec(), 0)[0][0]
    base = [{"doc_type": "start", "run_id": "r", "seq": 1}]
    base += [{"doc_type": "event", "run_id": "r", "seq": 2 + k, "body": to_record(good)}
             for k in range(3)]
    base.append({"doc_type": "stop", "run_id": "r", "seq": 5})
    mutations = [
        lambda d: d[1:],                                   # no start
        lambda d: d[:2] + [d[1]] + d[2:],                  # duplicate seq
        lambda d: [d[0], d[2], d[1]] + d[3:],              # out of order
        lambda d: d + [d[0]],                              # second start
        lambda d: d + [dict(d[1], seq=9)],                 # event after stop
        lambda d: [d[-1]] + d,                             # stop before start
        lambda d: d[:2] + [dict(d[2], doc_type="resource")] + d[3:],
        lambda d: d[:2] + [dict(d[2], seq=str(d[2]["seq"]))] + d[3:],
        lambda d: d[:2] + [dict(d[2], run_id="")] + d[3:],
        lambda d: d[:2] + [dict(d[2], body=[1, 2])] + d[3:],
        lambda d: d[:2] + [dict(d[2], body={"kind": "spectrum"})] + d[3:],
        lambda d: d[:2] + [json.dumps(d[2])[:-int(rng.integers(1, 20))]] + d[3:],
        lambda d: d[:2] + [[d[2]]] + d[3:],
    ]
    for _ in range(n):
        yield mutations[int(rng.integers(len(mutations)))](list(base))


def test_c11_deployment(criterion, tmp_path, flaky_webhook, ee_pipeline, xpcs_bench):
    url, bodies, attempts = flaky_webhook
    with criterion(11, "deployment: watcher, webhook, quarantine, fuzz") as info:
        t0 = time.perf_counter()
        bad = [b for b in xpcs_bench.items if b.label is Status.ANOMALOUS
               and ee_pipeline.score_bundle(b) > ee_pipeline.threshold][:2]
        good = [b for b in xpcs_bench.items if b.label is Status.NORMAL
                and ee_pipeline.score_bundle(b) <= ee_pipeline.threshold][:8]
        incoming = tmp_path / "incoming"
        incoming.mkdir()
        for k, b in enumerate(good[:3] + bad[:1] + good[3:] + bad[1:]):
            write_jsonl(incoming / f"m{k:02d}.jsonl", [b])
        (incoming / "zz-corrupt.jsonl").write_text('{"kind": "series", "chan')

        dead = tmp_path / "dead-letter.jsonl"
        webhook = WebhookSink(url, dead, policy=RetryPolicy(), timeout=2)
        memory = MemorySink()
        watcher = Watcher(WatchConfig(incoming, "*.jsonl", poll_interval=0.01),
                          AnomalyAgent(ee_pipeline), [webhook, memory])
        for _ in range(4):
            watcher.poll_once()
        webhook.close(deadline=20)

        sent = [m["sequence_number"] for m in memory.messages if m["type"] == "report"]
        delivered = sorted({m["sequence_number"] for m in bodies if m["type"] == "report"})
        assert sent == list(range(1, 11))
        assert delivered == sent, f"delivered {delivered}"
        assert len(bodies) == len(memory.messages)
        assert not dead.exists(), "dead-letter file is not empty"
        assert watcher.stats.summary() == \
            "files seen 11 / reports sent 10 / alarms 2 / quarantined 1"
        assert attempts[0] == len(bodies) + 2

        rng = np.random.default_rng(11)
        rejected = 0
        for docs in _malformed_streams(rng, 500):
            with pytest.raises(DocumentProtocolError):
                list(DocumentStream(docs))
            rejected += 1
        elapsed = time.perf_counter() - t0
        assert elapsed < 30, f"{elapsed:.1f} s"
        info["posts"] = attempts[0]
        info["fuzz_rejected"] = rejected


# 12 -----------------------------------------------------------------------------------

def test_c12_persistence(criterion, tmp_path, xpcs_X, xafs_bench):
    with criterion(12, "artifact round trip and tamper detection") as info:
        rng = np.random.default_rng(12)
        spectra, _ = synth.gen_ramp(synth.RampSpec(), 0)
        V = np.array([s.intensity for s in spectra])
        bodies = {
            "nmf": nmf_fit(V, 3, max_iter=200, seed=0),
            "anomaly": fit_pipeline("ee", xpcs_X[:300], 6, 0.05, seed=0),
            "classification": train_classifier(xafs_bench.items, "MLP", "engineered"),
        }
        Xa = xpcs_X.mean(0) + xpcs_X.std(0) * rng.standard_normal((100, xpcs_X.shape[1]))
        Xc = bodies["classification"].vectorize(xafs_bench.items[:100])
        Xc = Xc + 0.05 * rng.standard_normal(Xc.shape)
        Xn = rng.random((100, V.shape[1]))
        predict = {
            "nmf": lambda m: nmf_transform(m, Xn),
            "anomaly": lambda m: m.score_features(Xa),
            "classification": lambda m: np.column_stack(m.predict_vectors(Xc)),
        }
        flips = 0
        for kind, body in bodies.items():
            path = save_model(body, tmp_path / f"{kind}.json")
            back = load_model(path)
            assert back.kind == kind
            assert np.array_equal(predict[kind](body), predict[kind](back.body)), kind
            raw = path.read_bytes()
            for pos in rng.choice(len(raw) - 1, 200, replace=False):
                tampered = bytearray(raw)
                tampered[pos] = (tampered[pos] + int(rng.integers(1, 95))) % 95 + 32
                if tampered[pos] == raw[pos]:
                    tampered[pos] = raw[pos] ^ 1
                path.write_bytes(bytes(tampered))
                with pytest.raises(ArtifactError):
                    load_model(path)
                flips += 1
            path.write_bytes(raw)
        info["tampered_bytes_detected"] = f"{flips}/{flips}"
