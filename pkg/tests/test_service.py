import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from numpy.lib.stride_tricks import sliding_window_view

from cvsqa.assess import fit_two_sigma, residual_batch, youden_max
from cvsqa.model import init_params
from cvsqa.preprocess import embed_cycles, segment_cycles
from cvsqa.service import create_app
from cvsqa.simulate import MotionEpisode, SimConfig, synthesize_trace
from cvsqa.traces import NormStats, SignalTrace, save_trace
from cvsqa.training import Checkpoint, default_train_config, save_checkpoint


@pytest.fixture(scope="module")
def corpus():
    """Three in-memory traces: two labeled with motion, one unlabeled."""
    cfg0 = SimConfig(duration=26.0, hr_mean=60.0, seed=10,
                     motion_episodes=(MotionEpisode(3.0, 5.0),))
    lab0, _ = synthesize_trace(cfg0, "lab0")
    cfg1 = SimConfig(duration=26.0, hr_mean=60.0, seed=11,
                     motion_episodes=(MotionEpisode(2.0, 4.0, profile="ramp"),))
    lab1, _ = synthesize_trace(cfg1, "lab1")
    cfg2 = SimConfig(duration=12.0, hr_mean=60.0, seed=99)
    raw, _ = synthesize_trace(cfg2, "plain")
    plain = SignalTrace("plain", raw.fs, raw.t0, raw.cvs, raw.ecg, None)
    return [lab0, lab1, plain]


def point_checkpoint(tau=5.0):
    cfg = default_train_config("point", n_input=8, n_future=0, hidden_dim=4,
                               latent_dim=4, epochs=1)
    params = init_params(cfg.model_config(), seed=0)
    return Checkpoint(cfg, params, NormStats(0.0, 1.0), tau, [])


def cycle_checkpoint(tau=5.0):
    cfg = default_train_config("cycle", n_input=2, n_future=0, data_dim=30,
                               hidden_dim=4, latent_dim=4, epochs=1)
    params = init_params(cfg.model_config(), seed=0)
    return Checkpoint(cfg, params, NormStats(0.0, 1.0), tau, [])


def build_env(root, corpus, ckpt):
    """Write the corpus and checkpoint under root; return (data_dir, ckpt_path)."""
    data_dir = root / "data"
    data_dir.mkdir(exist_ok=True)
    for trace in corpus:
        save_trace(trace, data_dir / f"{trace.trace_id}.csv")
    ckpt_path = None
    if ckpt is not None:
        ckpt_path = root / "model.ckpt"
        save_checkpoint(ckpt, ckpt_path)
    return data_dir, ckpt_path


@pytest.fixture(scope="module")
def point_api(tmp_path_factory, corpus):
    root = tmp_path_factory.mktemp("svc_point")
    ckpt = point_checkpoint()
    data_dir, ckpt_path = build_env(root, corpus, ckpt)
    return data_dir, ckpt_path, ckpt


@pytest.fixture(scope="module")
def cycle_api(tmp_path_factory, corpus):
    root = tmp_path_factory.mktemp("svc_cycle")
    ckpt = cycle_checkpoint()
    data_dir, ckpt_path = build_env(root, corpus, ckpt)
    return data_dir, ckpt_path, ckpt


def client_for(env):
    data_dir, ckpt_path, _ = env
    return TestClient(create_app(data_dir, ckpt_path))


def point_residual_oracle(trace, ckpt):
    windows = sliding_window_view(trace.cvs, 8)[:, :, None]
    return residual_batch(ckpt.params, windows, norm=ckpt.train_config.norm)


class TestSessionAndTraces:
    def test_session_with_checkpoint(self, point_api):
        c = client_for(point_api)
        body = c.get("/session").json()
        assert body == {"checkpoint": "model.ckpt", "mode": "point",
                        "tau": 5.0, "n_traces": 3}

    def test_session_without_checkpoint(self, point_api):
        data_dir, _, _ = point_api
        c = TestClient(create_app(data_dir))
        body = c.get("/session").json()
        assert body == {"checkpoint": None, "mode": None,
                        "tau": None, "n_traces": 3}

    def test_trace_listing(self, point_api, corpus):
        c = client_for(point_api)
        rows = c.get("/traces").json()["traces"]
        assert [r["trace_id"] for r in rows] == ["lab0", "lab1", "plain"]
        assert [r["labeled"] for r in rows] == [True, True, False]
        assert rows[0]["n_samples"] == 2600
        assert rows[0]["fs"] == 100.0
        assert rows[2]["duration"] == pytest.approx(12.0)


class TestSeries:
    def test_full_fidelity_subrange(self, point_api, corpus):
        c = client_for(point_api)
        body = c.get("/traces/lab0/series", params={"from": 100, "to": 150}).json()
        assert body["downsampled"] is False
        assert body["from"] == 100 and body["to"] == 150
        assert body["cvs"] == corpus[0].cvs[100:150].tolist()
        assert body["ecg"] == corpus[0].ecg[100:150].tolist()
        assert body["labels"] == corpus[0].labels[100:150].tolist()

    def test_unlabeled_trace_has_null_labels(self, point_api):
        c = client_for(point_api)
        body = c.get("/traces/plain/series", params={"from": 0, "to": 10}).json()
        assert body["labels"] is None

    def test_bucketed_minmax_oracle(self, point_api, corpus):
        c = client_for(point_api)
        body = c.get("/traces/lab0/series", params={"max_points": 100}).json()
        n = 2600
        factor = -(-n // 100)
        assert body["downsampled"] is True
        assert body["factor"] == factor
        edges = list(range(0, n, factor)) + [n]
        assert body["bucket_starts"] == edges[:-1]
        cvs = corpus[0].cvs
        want_min = [float(cvs[s:e].min()) for s, e in zip(edges, edges[1:])]
        want_max = [float(cvs[s:e].max()) for s, e in zip(edges, edges[1:])]
        assert body["cvs_min"] == want_min
        assert body["cvs_max"] == want_max
        labels = corpus[0].labels
        want_lab = [int(labels[s:e].min()) for s, e in zip(edges, edges[1:])]
        assert body["labels"] == want_lab
        assert 0 in body["labels"]  # motion episode survives bucketing

    def test_bucketed_subrange(self, point_api, corpus):
        c = client_for(point_api)
        body = c.get("/traces/lab0/series",
                     params={"from": 50, "to": 2550, "max_points": 50}).json()
        assert body["factor"] == 50
        edges = list(range(50, 2550, 50)) + [2550]
        cvs = corpus[0].cvs
        want = [float(cvs[s:e].max()) for s, e in zip(edges, edges[1:])]
        assert body["cvs_max"] == want

    def test_bad_ranges(self, point_api):
        c = client_for(point_api)
        assert c.get("/traces/lab0/series", params={"from": -1}).status_code == 400
        assert c.get("/traces/lab0/series", params={"to": 99999}).status_code == 400
        assert c.get("/traces/lab0/series",
                     params={"from": 10, "to": 5}).status_code == 400
        assert c.get("/traces/lab0/series",
                     params={"max_points": 1}).status_code == 400

    def test_unknown_trace_404(self, point_api):
        c = client_for(point_api)
        assert c.get("/traces/nope/series").status_code == 404


class TestResiduals:
    def test_point_oracle(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        body = c.get("/traces/lab0/residuals").json()
        assert body["mode"] == "point"
        assert body["n_samples"] == 2600
        assert body["anchors"] == list(range(7, 2600))
        assert body["warning"] is None
        assert "cycle_spans" not in body
        want = point_residual_oracle(corpus[0], ckpt)
        np.testing.assert_array_equal(np.array(body["residuals"]), want)

    def test_cycle_oracle(self, cycle_api, corpus):
        data_dir, ckpt_path, ckpt = cycle_api
        c = client_for(cycle_api)
        body = c.get("/traces/lab0/residuals").json()
        assert body["mode"] == "cycle"
        cycles = segment_cycles(corpus[0])
        assert body["cycle_spans"] == [[cy.start, cy.end] for cy in cycles]
        assert body["anchors"] == list(range(1, len(cycles)))
        emb = embed_cycles(corpus[0], cycles, 30)
        windows = np.stack([emb[s:s + 2] for s in range(len(cycles) - 1)])
        want = residual_batch(ckpt.params, windows, norm=ckpt.train_config.norm)
        np.testing.assert_array_equal(np.array(body["residuals"]), want)

    def test_cache_is_stable_across_calls_and_cutoff_moves(self, point_api):
        c = client_for(point_api)
        first = c.get("/traces/lab0/residuals").content
        again = c.get("/traces/lab0/residuals").content
        assert first == again
        c.put("/cutoff", json={"tau": 0.001})
        after = c.get("/traces/lab0/residuals").content
        assert first == after

    def test_no_checkpoint_409(self, point_api):
        data_dir, _, _ = point_api
        c = TestClient(create_app(data_dir))
        assert c.get("/traces/lab0/residuals").status_code == 409
        assert c.get("/traces/lab0/predictions").status_code == 409
        assert c.post("/export/pseudolabels").status_code == 409

    def test_point_short_trace_warns(self, tmp_path, corpus):
        tiny = SignalTrace("tiny", 100.0, 0.0, np.zeros(5), np.zeros(5))
        data_dir, ckpt_path = build_env(tmp_path, corpus + [tiny], point_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        body = c.get("/traces/tiny/residuals").json()
        assert body["warning"] is not None
        assert body["anchors"] == [] and body["residuals"] == []

    def test_cycle_segmentation_failure_warns(self, tmp_path, corpus):
        flat = SignalTrace("flat", 100.0, 0.0, np.zeros(1000), np.zeros(1000))
        data_dir, ckpt_path = build_env(tmp_path, corpus + [flat], cycle_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        body = c.get("/traces/flat/residuals").json()
        assert body["warning"] is not None
        assert body["anchors"] == []

    def test_cycle_too_few_cycles_warns(self, tmp_path, corpus):
        short, _ = synthesize_trace(SimConfig(duration=2.0, hr_mean=60.0), "short")
        data_dir, ckpt_path = build_env(tmp_path, corpus + [short], cycle_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        body = c.get("/traces/short/residuals").json()
        assert body["warning"] is not None
        assert body["anchors"] == []


class TestPredictions:
    def test_threshold_rule(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        res = point_residual_oracle(corpus[0], ckpt)
        tau = float(np.median(res))
        body = c.get("/traces/lab0/predictions", params={"tau": tau}).json()
        want = (res <= tau).astype(int).tolist()
        assert body["preds"] == want
        assert body["tau"] == tau
        assert body["anchors"] == list(range(7, 2600))

    def test_inf_tau_passes_everything(self, point_api):
        c = client_for(point_api)
        body = c.get("/traces/lab0/predictions", params={"tau": "inf"}).json()
        assert body["tau"] == "inf"
        assert set(body["preds"]) == {1}

    def test_default_tau_comes_from_session(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        body = c.get("/traces/lab0/predictions").json()
        res = point_residual_oracle(corpus[0], ckpt)
        assert body["tau"] == 5.0
        assert body["preds"] == (res <= 5.0).astype(int).tolist()

    def test_same_tau_identical_bodies(self, point_api):
        c = client_for(point_api)
        a = c.get("/traces/lab0/predictions", params={"tau": 3.25}).content
        b = c.get("/traces/lab0/predictions", params={"tau": 3.25}).content
        assert a == b

    def test_bad_tau_values(self, point_api):
        c = client_for(point_api)
        for bad in ("-1", "nan", "abc"):
            r = c.get("/traces/lab0/predictions", params={"tau": bad})
            assert r.status_code == 400, bad

    def test_no_cutoff_anywhere_400(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint(tau=None))
        c = TestClient(create_app(data_dir, ckpt_path))
        assert c.get("/traces/lab0/predictions").status_code == 400
        assert c.get("/traces/lab0/predictions",
                     params={"tau": 2.0}).status_code == 200

    def test_cycle_track_conventions(self, cycle_api):
        c = client_for(cycle_api)
        body = c.get("/traces/lab0/predictions", params={"tau": "inf"}).json()
        track = body["cycle_track"]
        assert len(track) == len(body["cycle_spans"]) == 25
        assert track[0] == -1            # window covers cycles [0, 2); anchor is 1
        assert all(v == 1 for v in track[1:])
        assert body["anchors"] == list(range(1, 25))


class TestCutoff:
    def test_manual_tau_and_metrics(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        res0 = point_residual_oracle(corpus[0], ckpt)
        tau = float(np.quantile(res0, 0.8))
        body = c.put("/cutoff", json={"tau": tau}).json()
        assert body["tau"] == tau
        m = body["metrics"]
        lab0 = sliding_window_view(corpus[0].labels, 8).min(axis=1)
        lab1 = sliding_window_view(corpus[1].labels, 8).min(axis=1)
        assert m["n_windows"] == len(lab0) + len(lab1)
        assert 0.0 <= m["accuracy"] <= 1.0
        assert set(m["predictive"]) == {"acc", "tpr", "tnr"}
        assert set(m["conventional"]) == {"sensitivity", "specificity"}

    def test_inf_tau_roundtrip(self, point_api):
        c = client_for(point_api)
        body = c.put("/cutoff", json={"tau": "inf"}).json()
        assert body["tau"] == "inf"
        assert body["metrics"]["conventional"]["sensitivity"] == 1.0

    def test_two_sigma_policy_oracle(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        body = c.put("/cutoff", json={"policy": "two_sigma"}).json()
        parts = []
        for trace in corpus:
            windows = sliding_window_view(trace.cvs, 8)[:, :, None]
            parts.append(residual_batch(ckpt.params, windows,
                                        norm=ckpt.train_config.norm))
        want = float(fit_two_sigma(np.concatenate(parts)))
        assert body["tau"] == want

    def test_youden_policy_oracle(self, point_api, corpus):
        data_dir, ckpt_path, ckpt = point_api
        c = client_for(point_api)
        body = c.put("/cutoff", json={"policy": "youden_max"}).json()
        res, labels = [], []
        for trace in corpus[:2]:
            res.append(point_residual_oracle(trace, ckpt))
            labels.append(sliding_window_view(trace.labels, 8).min(axis=1))
        want = float(youden_max(np.concatenate(res), np.concatenate(labels)))
        assert body["tau"] == want

    def test_youden_without_labels_400(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, [corpus[2]], point_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        assert c.put("/cutoff", json={"policy": "youden_max"}).status_code == 400

    def test_bad_bodies(self, point_api):
        c = client_for(point_api)
        assert c.put("/cutoff", json={}).status_code == 400
        assert c.put("/cutoff", json={"tau": 1.0,
                                      "policy": "two_sigma"}).status_code == 400
        assert c.put("/cutoff", json={"policy": "середина"}).status_code == 400
        assert c.put("/cutoff", json={"tau": -3}).status_code == 400
        assert c.put("/cutoff", json={"tau": "nan"}).status_code == 400

    def test_manual_tau_works_without_checkpoint(self, point_api):
        data_dir, _, _ = point_api
        c = TestClient(create_app(data_dir))
        body = c.put("/cutoff", json={"tau": 2.0}).json()
        assert body == {"tau": 2.0, "metrics": None}
        assert c.get("/session").json()["tau"] == 2.0


class TestAnnotations:
    def fresh(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        return data_dir, TestClient(create_app(data_dir, ckpt_path))

    def test_post_and_readback(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        payload = {"source": "guided", "author": "ana",
                   "spans": [[3, 5, 0]], "timestamp": 123.5}
        r = c.post("/traces/lab0/annotations", json=payload)
        assert r.status_code == 201
        rec = r.json()
        assert rec == {"trace_id": "lab0", "source": "guided", "author": "ana",
                       "spans": [[3, 5, 0]], "timestamp": 123.5}
        got = c.get("/traces/lab0/annotations").json()
        assert got["records"] == [rec]
        assert got["latest"] == [rec]

    def test_timestamp_defaults_to_now(self, tmp_path, corpus):
        import time
        data_dir, c = self.fresh(tmp_path, corpus)
        before = time.time()
        rec = c.post("/traces/lab0/annotations",
                     json={"source": "original", "author": "b",
                           "spans": []}).json()
        assert before - 1 <= rec["timestamp"] <= time.time() + 1

    def test_latest_per_source_author(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        c.post("/traces/lab0/annotations",
               json={"source": "original", "author": "ana", "spans": [[0, 2, 0]]})
        c.post("/traces/lab0/annotations",
               json={"source": "original", "author": "ana", "spans": [[1, 3, 0]]})
        c.post("/traces/lab0/annotations",
               json={"source": "original", "author": "bob", "spans": []})
        got = c.get("/traces/lab0/annotations").json()
        assert len(got["records"]) == 3
        assert len(got["latest"]) == 2
        by_author = {r["author"]: r for r in got["latest"]}
        assert by_author["ana"]["spans"] == [[1, 3, 0]]

    def test_validation_422(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        base = {"source": "guided", "author": "a", "spans": []}
        cases = [
            {**base, "source": "robot"},
            {**base, "author": ""},
            {**base, "author": 7},
            {**base, "spans": "nope"},
            {**base, "spans": [[1, 2]]},
            {**base, "spans": [[1, "x", 0]]},
            {**base, "spans": [[1, 2, 5]]},
            {**base, "spans": [[-1, 2, 0]]},
            {**base, "spans": [[0, 26, 0]]},
            {**base, "spans": [[4, 4, 0]]},
            {**base, "spans": [[0, 5, 0], [4, 6, 1]]},
            {**base, "timestamp": "soon"},
        ]
        for payload in cases:
            r = c.post("/traces/lab0/annotations", json=payload)
            assert r.status_code == 422, payload

    def test_touching_spans_are_fine(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        r = c.post("/traces/lab0/annotations",
                   json={"source": "guided", "author": "a",
                         "spans": [[0, 5, 0], [5, 8, 1]]})
        assert r.status_code == 201

    def test_unknown_trace_404(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        r = c.post("/traces/ghost/annotations",
                   json={"source": "guided", "author": "a", "spans": []})
        assert r.status_code == 404

    def test_journal_survives_restart(self, tmp_path, corpus):
        data_dir, c = self.fresh(tmp_path, corpus)
        rec = c.post("/traces/lab0/annotations",
                     json={"source": "guided", "author": "ana",
                           "spans": [[3, 5, 0]], "timestamp": 1.0}).json()
        lines = (data_dir / "annotations.jsonl").read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0]) == rec
        c2 = TestClient(create_app(data_dir))  # fresh process stand-in
        got = c2.get("/traces/lab0/annotations").json()
        assert got["records"] == [rec]

    def test_concurrent_posts_all_journaled(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        app = create_app(data_dir, ckpt_path)

        def worker(tag):
            client = TestClient(app)
            for k in range(5):
                r = client.post("/traces/lab0/annotations",
                                json={"source": "guided", "author": f"{tag}{k}",
                                      "spans": [[k, k + 1, 0]]})
                assert r.status_code == 201

        threads = [threading.Thread(target=worker, args=(t,)) for t in "ab"]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        lines = (data_dir / "annotations.jsonl").read_text().splitlines()
        records = [json.loads(l) for l in lines]
        assert len(records) == 10
        assert {r["author"] for r in records} == {f"{t}{k}" for t in "ab"
                                                  for k in range(5)}


class TestDissimilarity:
    def annotate(self, c, source, spans, author="x"):
        r = c.post("/traces/lab0/annotations",
                   json={"source": source, "author": author, "spans": spans})
        assert r.status_code == 201

    def fresh(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        return TestClient(create_app(data_dir, ckpt_path))

    def query(self, c, a, b):
        r = c.get("/dissimilarity", params={"a": a, "b": b, "trace": "lab0"})
        assert r.status_code == 200
        return r.json()

    def test_identical_spans_give_zero(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "machine", [[3, 5, 0]])
        self.annotate(c, "guided", [[3, 5, 0]])
        body = self.query(c, "machine", "guided")
        assert body == {"a": "machine", "b": "guided", "trace_id": "lab0",
                        "n_cycles": 25, "n_differing": 0, "dissimilarity": 0.0}

    def test_equivalent_decompositions_give_zero(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "original", [[3, 4, 0], [4, 5, 0]])
        self.annotate(c, "guided", [[3, 5, 0], [7, 9, 1]])  # 1 = default anyway
        assert self.query(c, "original", "guided")["dissimilarity"] == 0.0

    def test_two_of_twentyfive(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "original", [])
        self.annotate(c, "guided", [[3, 5, 0]])
        body = self.query(c, "original", "guided")
        assert body["n_differing"] == 2
        assert body["dissimilarity"] == 2 / 25 == 0.08

    def test_complement_gives_one(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "original", [[0, 25, 1]])
        self.annotate(c, "guided", [[0, 25, 0]])
        assert self.query(c, "original", "guided")["dissimilarity"] == 1.0

    def test_symmetry_and_self(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "original", [[2, 6, 0]])
        self.annotate(c, "guided", [[4, 9, 0]])
        ab = self.query(c, "original", "guided")
        ba = self.query(c, "guided", "original")
        assert ab["dissimilarity"] == ba["dissimilarity"]
        assert self.query(c, "guided", "guided")["dissimilarity"] == 0.0

    def test_latest_record_wins(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "original", [])
        self.annotate(c, "guided", [[0, 25, 0]])
        self.annotate(c, "guided", [])  # retraction: back to all-normal
        assert self.query(c, "original", "guided")["dissimilarity"] == 0.0

    def test_missing_source_404(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        self.annotate(c, "guided", [])
        r = c.get("/dissimilarity",
                  params={"a": "machine", "b": "guided", "trace": "lab0"})
        assert r.status_code == 404

    def test_bad_source_and_trace(self, tmp_path, corpus):
        c = self.fresh(tmp_path, corpus)
        r = c.get("/dissimilarity",
                  params={"a": "vibes", "b": "guided", "trace": "lab0"})
        assert r.status_code == 400
        r = c.get("/dissimilarity",
                  params={"a": "machine", "b": "guided", "trace": "ghost"})
        assert r.status_code == 404


class TestExport:
    def test_point_export_oracle(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        ckpt = point_checkpoint()
        c = TestClient(create_app(data_dir, ckpt_path))
        res = point_residual_oracle(corpus[0], ckpt)
        tau = float(np.quantile(res, 0.7))
        c.put("/cutoff", json={"tau": tau})
        out_dir = tmp_path / "out"
        body = c.post("/export/pseudolabels",
                      json={"out_dir": str(out_dir),
                            "trace_ids": ["lab0"]}).json()
        assert body["tau"] == tau
        assert len(body["files"]) == 1
        from cvsqa.traces import load_trace
        exported = load_trace(body["files"][0])
        preds = (res <= tau).astype(np.int8)
        want = np.ones(2600, dtype=np.int8)
        want[7:] = preds                      # anchors r-1..n-1
        np.testing.assert_array_equal(exported.labels, want)
        np.testing.assert_array_equal(exported.cvs, corpus[0].cvs)

    def test_sidecar_margin_predicate(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        ckpt = point_checkpoint()
        c = TestClient(create_app(data_dir, ckpt_path))
        res = point_residual_oracle(corpus[0], ckpt)
        tau = float(np.median(res))
        c.put("/cutoff", json={"tau": tau})
        body = c.post("/export/pseudolabels",
                      json={"out_dir": str(tmp_path / "out"),
                            "trace_ids": ["lab0"]}).json()
        lines = open(body["sidecar"]).read().splitlines()
        assert lines[0] == "trace_id,anchor,residual"
        rows = [l.split(",") for l in lines[1:]]
        assert len(rows) == body["n_low_margin"]
        want_anchors = {int(a) for a in np.arange(7, 2600)[
            np.abs(res - tau) / tau < 0.1]}
        assert {int(r[1]) for r in rows} == want_anchors
        for _, anchor, res_s in rows:
            assert abs(float(res_s) - tau) / tau < 0.1

    def test_inf_cutoff_labels_everything_normal(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        c.put("/cutoff", json={"tau": "inf"})
        body = c.post("/export/pseudolabels",
                      json={"out_dir": str(tmp_path / "out")}).json()
        assert body["tau"] == "inf"
        assert body["n_low_margin"] == 0
        from cvsqa.traces import load_trace
        for path in body["files"]:
            assert set(np.unique(load_trace(path).labels)) == {1}

    def test_cycle_export_renders_cycles(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, cycle_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        c.put("/cutoff", json={"tau": "inf"})
        body = c.post("/export/pseudolabels",
                      json={"out_dir": str(tmp_path / "out"),
                            "trace_ids": ["lab0"]}).json()
        from cvsqa.traces import load_trace
        exported = load_trace(body["files"][0])
        assert set(np.unique(exported.labels)) == {1}

    def test_no_cutoff_400(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint(tau=None))
        c = TestClient(create_app(data_dir, ckpt_path))
        assert c.post("/export/pseudolabels").status_code == 400

    def test_unknown_trace_404(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        r = c.post("/export/pseudolabels", json={"trace_ids": ["ghost"]})
        assert r.status_code == 404


class TestUiMount:
    def test_static_mount(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<p>hello</p>")
        c = TestClient(create_app(data_dir, ckpt_path, ui_dir=ui))
        r = c.get("/ui/")
        assert r.status_code == 200 and "hello" in r.text

    def test_no_mount_by_default(self, tmp_path, corpus):
        data_dir, ckpt_path = build_env(tmp_path, corpus, point_checkpoint())
        c = TestClient(create_app(data_dir, ckpt_path))
        assert c.get("/ui/").status_code == 404
