import numpy as np
import pytest
from fastapi.testclient import TestClient

from sigseek.corpus import MotifClass, encode_volume, generate_volume
from sigseek.evaluation import QuerySet, run_query
from sigseek.mih import build_index
from sigseek.service import ServiceConfig, ServiceState, create_app, render_patch
from sigseek.sigcore import VoxelCoord, sig_from_hex, sig_to_hex
from sigseek.store import ingest, lookup_signature
from sigseek.trainer.encoder import init_encoder


@pytest.fixture(scope="module")
def pipeline():
    vol = generate_volume(
        (32, 32, 32),
        [MotifClass(0, "blob", size=2.5), MotifClass(1, "ring", size=4.0)],
        [5, 5],
        min_spacing=6.0,
        seed=42,
    )
    model = init_encoder((8, 8, 8), embed_dim=64, channels=(3, 4), seed=7)
    records = encode_volume(vol.data, model, (8, 8, 8), stride=4)
    store = ingest(records, shard_size=16, stride=4, max_duplicates=64,
                   extent=vol.data.shape)
    index = build_index(list(store.iter_records()), partition_count=4, seed=11)
    return vol, store, index


@pytest.fixture(scope="module")
def client(pipeline):
    vol, store, index = pipeline
    state = ServiceState(
        store=store,
        index=index,
        volume=vol.data,
        config=ServiceConfig(nms_threshold=6.0, top_k=30, rank_n=3),
        ready=True,
    )
    return TestClient(create_app(state))


class TestSignatureEndpoint:
    def test_exact_site(self, pipeline, client):
        _, store, _ = pipeline
        rec = next(store.iter_records())
        r = client.get("/v1/signature", params={"x": rec.coord.x, "y": rec.coord.y,
                                                "z": rec.coord.z})
        assert r.status_code == 200
        body = r.json()
        assert (body["x"], body["y"], body["z"]) == rec.coord.as_tuple()
        assert body["distance_to_site"] == 0.0
        assert sig_from_hex(body["signature"]) == rec.sig

    def test_matches_direct_store_call(self, pipeline, client):
        _, store, _ = pipeline
        rng = np.random.default_rng(0)
        for _ in range(25):
            p = VoxelCoord(*(int(v) for v in rng.integers(0, 32, 3)))
            body = client.get("/v1/signature",
                              params={"x": p.x, "y": p.y, "z": p.z}).json()
            expect = lookup_signature(store, p)
            assert (body["x"], body["y"], body["z"]) == expect.record.coord.as_tuple()
            assert body["distance_to_site"] == pytest.approx(expect.distance)

    def test_malformed_param_gives_400_with_field(self, client):
        r = client.get("/v1/signature", params={"x": "abc", "y": 0, "z": 0})
        assert r.status_code == 400
        assert "x" in r.json()["message"]

    def test_out_of_bounds_400(self, client):
        r = client.get("/v1/signature", params={"x": 500, "y": 0, "z": 0})
        assert r.status_code == 400


class TestQueryEndpoint:
    def test_stored_signature_first_match_distance_zero(self, pipeline, client):
        _, store, _ = pipeline
        rec = next(store.iter_records())
        r = client.post("/v1/query", json={"signature_hex": sig_to_hex(rec.sig), "k": 5})
        assert r.status_code == 200
        matches = r.json()["matches"]
        assert matches and matches[0]["distance"] == 0.0

    def test_point_query_flags_self(self, pipeline, client):
        _, store, _ = pipeline
        rec = next(store.iter_records())
        r = client.post("/v1/query",
                        json={"x": rec.coord.x, "y": rec.coord.y, "z": rec.coord.z,
                              "k": 5})
        matches = r.json()["matches"]
        self_entries = [m for m in matches if m.get("self")]
        assert len(self_entries) == 1
        assert (self_entries[0]["x"], self_entries[0]["y"], self_entries[0]["z"]) == \
            rec.coord.as_tuple()

    def test_k_zero_rejected(self, client):
        r = client.post("/v1/query", json={"signature_hex": "00" * 8, "k": 0})
        assert r.status_code == 400

    def test_both_point_and_signature_rejected(self, client):
        r = client.post("/v1/query",
                        json={"x": 1, "y": 1, "z": 1, "signature_hex": "00" * 8})
        assert r.status_code == 400
        r = client.post("/v1/query", json={})
        assert r.status_code == 400

    def test_response_equals_library_pipeline(self, pipeline, client):
        _, store, index = pipeline
        rng = np.random.default_rng(1)
        records = list(store.iter_records())
        for _ in range(20):
            rec = records[int(rng.integers(0, len(records)))]
            r = client.post("/v1/query",
                            json={"signature_hex": sig_to_hex(rec.sig),
                                  "k": 10, "t": 5.0})
            qs = QuerySet.from_signatures([(VoxelCoord(0, 0, 0), rec.sig)])
            expect = [
                {"x": p.coord.x, "y": p.coord.y, "z": p.coord.z,
                 "distance": p.distance, "rank": p.rank}
                for p in run_query(index, qs, t=5.0, k=10)
            ]
            assert r.json()["matches"] == expect

    def test_503_while_loading(self):
        state = ServiceState(ready=False)
        with TestClient(create_app(state)) as unready:
            r = unready.post("/v1/query", json={"signature_hex": "00" * 8})
            assert r.status_code == 503


class TestSessionEndpoints:
    def make_session(self, client, pipeline, **overrides):
        vol, _, _ = pipeline
        seed_site = vol.motif_sites[0][0]
        body = {"seeds": [{"x": seed_site.x, "y": seed_site.y, "z": seed_site.z}]}
        body.update(overrides)
        r = client.post("/v1/session", json=body)
        assert r.status_code == 200
        return r.json()

    def test_new_session_single_seed(self, client, pipeline):
        body = self.make_session(client, pipeline)
        assert body["query_set_size"] == 1

    def test_true_label_grows_query_set_and_reranks(self, client, pipeline):
        _, _, index = pipeline
        sess = self.make_session(client, pipeline, rank_n=2, k=30)
        sid = sess["id"]
        nxt = client.get(f"/v1/session/{sid}/next").json()
        assert not nxt["exhausted"]
        cand = nxt["candidate"]
        r = client.post(f"/v1/session/{sid}/label",
                        json={"x": cand["x"], "y": cand["y"], "z": cand["z"],
                              "verdict": True})
        assert r.status_code == 200
        assert r.json()["query_set_size"] == 2

        # rankings now reflect min-distance over both queries
        detail = client.get(f"/v1/session/{sid}").json()
        qs = QuerySet.from_signatures(
            [(VoxelCoord(q["x"], q["y"], q["z"]), sig_from_hex(q["signature"]))
             for q in detail["query_set"]]
        )
        preds = run_query(index, qs, t=6.0, k=30)
        nxt2 = client.get(f"/v1/session/{sid}/next").json()
        if nxt2["candidate"] is not None:
            labeled = {(e["x"], e["y"], e["z"]) for e in detail["label_history"]}
            members = {c.as_tuple() for c in qs.coords}
            expect = next(
                p for p in preds[1:]
                if p.coord.as_tuple() not in labeled and p.coord.as_tuple() not in members
            )
            got = nxt2["candidate"]
            assert (got["x"], got["y"], got["z"]) == expect.coord.as_tuple()
            assert got["distance"] == expect.distance

    def test_false_label_does_not_grow_query_set(self, client, pipeline):
        sess = self.make_session(client, pipeline, rank_n=2)
        sid = sess["id"]
        cand = client.get(f"/v1/session/{sid}/next").json()["candidate"]
        r = client.post(f"/v1/session/{sid}/label",
                        json={"x": cand["x"], "y": cand["y"], "z": cand["z"],
                              "verdict": False})
        assert r.json()["query_set_size"] == 1

    def test_duplicate_label_409(self, client, pipeline):
        sess = self.make_session(client, pipeline, rank_n=2)
        sid = sess["id"]
        cand = client.get(f"/v1/session/{sid}/next").json()["candidate"]
        payload = {"x": cand["x"], "y": cand["y"], "z": cand["z"], "verdict": True}
        assert client.post(f"/v1/session/{sid}/label", json=payload).status_code == 200
        assert client.post(f"/v1/session/{sid}/label", json=payload).status_code == 409

    def test_unknown_session_404(self, client):
        assert client.get("/v1/session/nope/next").status_code == 404
        assert client.post("/v1/session/nope/label",
                           json={"x": 0, "y": 0, "z": 0, "verdict": True}).status_code == 404

    def test_label_history_replay_reconstructs_query_set(self, client, pipeline):
        sess = self.make_session(client, pipeline, rank_n=2)
        sid = sess["id"]
        for _ in range(3):
            nxt = client.get(f"/v1/session/{sid}/next").json()
            if nxt["candidate"] is None:
                break
            cand = nxt["candidate"]
            verdict = cand["rank"] % 2 == 0
            client.post(f"/v1/session/{sid}/label",
                        json={"x": cand["x"], "y": cand["y"], "z": cand["z"],
                              "verdict": verdict})
        detail = client.get(f"/v1/session/{sid}").json()
        replayed = [tuple(s) for s in detail["seeds"]]
        for e in detail["label_history"]:
            if e["verdict"]:
                replayed.append((e["x"], e["y"], e["z"]))
        actual = [(q["x"], q["y"], q["z"]) for q in detail["query_set"]]
        assert actual == replayed


class TestSessionLog:
    def test_append_only_log_records_sessions_and_labels(self, pipeline, tmp_path):
        import json

        vol, store, index = pipeline
        log_path = tmp_path / "sessions.jsonl"
        state = ServiceState(
            store=store, index=index, volume=vol.data,
            config=ServiceConfig(nms_threshold=6.0, top_k=30, rank_n=2,
                                 session_log=log_path),
            ready=True,
        )
        client = TestClient(create_app(state))
        seed_site = vol.motif_sites[0][0]
        sid = client.post("/v1/session", json={
            "seeds": [{"x": seed_site.x, "y": seed_site.y, "z": seed_site.z}],
        }).json()["id"]
        cand = client.get(f"/v1/session/{sid}/next").json()["candidate"]
        client.post(f"/v1/session/{sid}/label",
                    json={"x": cand["x"], "y": cand["y"], "z": cand["z"],
                          "verdict": True})
        events = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert events[0]["event"] == "session" and events[0]["id"] == sid
        assert events[1]["event"] == "label" and events[1]["verdict"] is True


class TestPatchEndpoint:
    def test_constant_half_volume_renders_128(self):
        state = ServiceState(volume=np.full((16, 16, 16), 0.5), ready=True)
        with TestClient(create_app(state)) as cl:
            r = cl.get("/v1/patch", params={"x": 8, "y": 8, "z": 8, "size": 8})
            assert r.status_code == 200
            from PIL import Image
            import io

            img = np.asarray(Image.open(io.BytesIO(r.content)))
            assert img.shape == (8, 8)
            assert np.all(img == 128)  # 0.5*255 = 127.5 rounds half-up to 128

    def test_fully_out_of_bounds_all_zero(self):
        state = ServiceState(volume=np.full((16, 16, 16), 0.5), ready=True)
        with TestClient(create_app(state)) as cl:
            r = cl.get("/v1/patch", params={"x": 500, "y": 500, "z": 8, "size": 8})
            from PIL import Image
            import io

            img = np.asarray(Image.open(io.BytesIO(r.content)))
            assert np.all(img == 0)

    def test_deterministic_bytes(self, client):
        params = {"x": 16, "y": 16, "z": 16, "size": 16}
        assert client.get("/v1/patch", params=params).content == \
            client.get("/v1/patch", params=params).content

    def test_size_cap(self, client):
        r = client.get("/v1/patch", params={"x": 1, "y": 1, "z": 1, "size": 10_000})
        assert r.status_code == 400

    def test_render_orientation(self):
        vol = np.zeros((8, 8, 3))
        vol[6, 2, 1] = 1.0  # bright voxel at x=6, y=2
        img = render_patch(vol, x=4, y=4, z=1, size=8)
        assert img[2 - 0, 6 - 0] == 255  # row=y, col=x (window starts at 0,0)
