import json
from urllib.parse import quote

import pytest
from fastapi.testclient import TestClient

from factories import key, onion, record
from passive_ssh.api import ApiConfig, create_app, paginate
from passive_ssh.store import Store

K1, K2 = key("a1"), key("a2", "ssh-rsa")


def client(store=None, **config) -> tuple[TestClient, Store]:
    store = store or Store()
    return TestClient(create_app(store, ApiConfig(**config))), store


def push(c: TestClient, *records, headers=None):
    body = [r.to_dict() for r in records]
    return c.post("/records", content=json.dumps(body), headers=headers or {})


def test_host_round_trip():
    c, store = client()
    r = record("192.0.2.1", t=100, keys=[K1])
    assert push(c, r).json() == {
        "ingested": 1, "outcomes": [{"new_host": True, "new_keys": 1, "new_banner": True}]}
    resp = c.get("/host/ssh/192.0.2.1")
    assert resp.status_code == 200
    body = resp.json()
    assert body["key_count"] == 1
    assert body["histories"] == [h.to_dict() for h in store.host_lookup("192.0.2.1")]
    assert body["histories"][0]["banners"][0]["banner"] == r.banner.raw


def test_host_port_filter():
    c, _ = client()
    push(c, record("192.0.2.1", 22), record("192.0.2.1", 2222))
    assert len(c.get("/host/ssh/192.0.2.1").json()["histories"]) == 2
    assert len(c.get("/host/ssh/192.0.2.1", params={"port": 2222}).json()["histories"]) == 1
    assert c.get("/host/ssh/192.0.2.1", params={"port": "x"}).status_code == 400


def test_not_found_shapes():
    c, _ = client()
    for path in ["/fingerprint/" + "0" * 32, "/host/ssh/192.0.2.9", "/hassh/hosts/" + "f" * 32,
                 "/banner/SSH-2.0-nothing", "/no/such/route"]:
        resp = c.get(path)
        assert resp.status_code == 404, path
        assert resp.json() == {"error": "not found"}


def test_bad_inputs():
    c, _ = client()
    assert c.get("/host/ssh/not-a-host").status_code == 400
    assert c.get("/fingerprint/zzz").status_code == 400
    assert c.get("/banners", params={"cursor": "garbage"}).status_code == 400


def test_fingerprint_and_hassh():
    c, _ = client()
    a, b = record("192.0.2.1", t=5, keys=[K1]), record("192.0.2.2", t=9, keys=[K1])
    push(c, a, b)
    body = c.get(f"/fingerprint/{K1.md5_hex}").json()
    assert body["md5"] == K1.md5_hex and body["algorithm"] == "ssh-ed25519"
    assert (body["first_seen"], body["last_seen"]) == (5, 9)
    assert [h["host"] for h in body["hosts"]] == ["192.0.2.1", "192.0.2.2"]
    assert c.get(f"/fingerprint/{K1.md5_colon}").json()["md5"] == K1.md5_hex
    assert len(c.get(f"/hassh/hosts/{a.hassh_server}").json()["hosts"]) == 2
    keys = c.get("/fingerprint/all").json()["keys"]
    assert [k["md5"] for k in keys] == [K1.md5_hex]


def test_banner_routes():
    c, _ = client()
    banner = "SSH-2.0-OpenSSH_7.4 Debian/x?y"
    push(c, record("192.0.2.1", banner=banner))
    assert c.get("/banners").json()["banners"] == [banner]
    resp = c.get("/banner/" + quote(banner, safe=""))
    assert resp.status_code == 200
    assert resp.json()["hosts"][0]["host"] == "192.0.2.1"


def test_stats_and_onions():
    c, _ = client()
    push(c, record(onion("x"), keys=[K1]), record("192.0.2.1", keys=[K1, K2]))
    stats = c.get("/stats").json()
    assert stats["key_counts_by_type"] == {"ssh-ed25519": 1, "ssh-rsa": 1}
    assert stats["onion_count"] == 1
    pairs = c.get("/onions/correlation").json()["pairs"]
    assert pairs == [{"onion": {"host": onion("x"), "port": 22},
                      "clearnet": {"host": "192.0.2.1", "port": 22}, "md5": K1.md5_hex}]


def test_push_single_object():
    c, _ = client()
    resp = c.post("/records", json=record("192.0.2.1").to_dict())
    assert resp.json()["ingested"] == 1


@pytest.mark.parametrize("body", [b"{not json", b"\xff\xfe", b"[1, 2]", b'{"endpoint": {}}', b"null"])
def test_malformed_push(body):
    c, store = client()
    resp = c.post("/records", content=body)
    assert resp.status_code == 400
    assert "error" in resp.json()
    assert store.record_count() == 0


def test_push_is_all_or_nothing():
    c, store = client()
    good = record("192.0.2.1").to_dict()
    resp = c.post("/records", json=[good, {"bad": True}])
    assert resp.status_code == 400
    assert store.record_count() == 0


def test_auth():
    c, _ = client(tokens={"s3cret"})
    assert push(c, record("192.0.2.1")).status_code == 401
    assert push(c, record("192.0.2.1"), headers={"Authorization": "Bearer nope"}).status_code == 401
    assert push(c, record("192.0.2.1"), headers={"Authorization": "Bearer s3cret"}).status_code == 200
    assert c.get("/stats").status_code == 200


def test_protected_lookups():
    c, _ = client(tokens={"t"}, protect_lookups=True)
    assert c.get("/stats").status_code == 401
    assert c.get("/stats", headers={"Authorization": "Bearer t"}).status_code == 200


def test_readonly():
    c, store = client(readonly=True)
    resp = push(c, record("192.0.2.1"))
    assert resp.status_code == 405
    assert resp.json() == {"error": "store is read-only"}
    assert store.record_count() == 0


def test_pagination():
    c, store = client(page_size=3)
    push(c, *[record(f"192.0.2.{i}", banner=f"SSH-2.0-v{i}") for i in range(8)])
    seen, cursor = [], None
    while True:
        body = c.get("/banners", params={"cursor": cursor} if cursor else {}).json()
        assert len(body["banners"]) <= 3
        seen += body["banners"]
        cursor = body["next_cursor"]
        if cursor is None:
            break
    assert seen == store.list_banners()


def test_paginate_caps_at_limit():
    page, nxt = paginate(list(range(25_000)), None, 10_000)
    assert len(page) == 10_000 and nxt is not None
    page, nxt = paginate(list(range(25_000)), nxt, 10_000)
    assert page[0] == 10_000
