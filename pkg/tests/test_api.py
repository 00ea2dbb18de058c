"""
HTTP routes: health, object listing, collision queries and task queueing.
"""
import pytest
from fastapi.testclient import TestClient

from app.api import pipeline as pipeline_routes
from app.main import app


IDENTITY = [1, 0, 0, 0, 0, 0, 0]


def at(x=0.0, y=0.0, z=0.0):
    return [1, 0, 0, 0, x, y, z]


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


class FakeTask:
    """Stands in for a Celery task; records what would have been queued."""

    def __init__(self):
        self.calls = []

    def delay(self, payload):
        self.calls.append(payload)
        return type("Queued", (), {"id": f"task-{len(self.calls)}"})()


class TestStatus:

    def test_root(self, client):
        body = client.get("/").json()
        assert body["status"] == "operational"
        assert body["name"] == "LOCC Collision Toolkit"

    def test_health(self, client):
        assert client.get("/health").json() == {"status": "healthy", "objects": 20}


class TestObjects:

    def test_listing(self, client):
        items = client.get("/objects").json()["objects"]
        assert len(items) == 20
        assert [i["id"] for i in items] == sorted(i["id"] for i in items)
        bowl = next(i for i in items if i["id"] == "bowl_wide")
        assert bowl["parts"] == 9 and bowl["convex"] is False

    def test_limit(self, client):
        assert len(client.get("/objects", params={"limit": 3}).json()["objects"]) == 3
        assert client.get("/objects", params={"limit": 0}).status_code == 422


class TestCollide:

    def test_exact(self, client):
        hit = client.post("/collide", json={"id1": "box_cube", "id2": "box_cube", "q1": IDENTITY, "q2": at(x=0.05)})
        assert hit.status_code == 200
        assert hit.json() == {"detector": "exact", "colliding": True, "probability": None}
        miss = client.post("/collide", json={"id1": "box_cube", "id2": "cone", "q1": IDENTITY, "q2": at(y=0.4)})
        assert miss.json()["colliding"] is False

    def test_gjk_hull(self, client):
        body = {"id1": "box_cube", "id2": "box_cube", "q1": IDENTITY, "q2": at(z=0.05), "detector": "gjk",
                "gjk": {"max_iterations": 9, "max_decomposition": 2, "max_triangles_per_hull": 16}}
        response = client.post("/collide", json=body)
        assert response.status_code == 200
        assert response.json()["detector"] == "ucf-gjk"
        assert response.json()["colliding"] is True

    def test_unknown_object(self, client):
        response = client.post("/collide", json={"id1": "box_cube", "id2": "teapot", "q1": IDENTITY, "q2": IDENTITY})
        assert response.status_code == 404

    def test_locc_needs_a_checkpoint(self, client):
        body = {"id1": "box_cube", "id2": "cone", "q1": IDENTITY, "q2": at(x=0.05), "detector": "locc"}
        assert client.post("/collide", json=body).status_code == 400

    def test_zero_quaternion(self, client):
        body = {"id1": "box_cube", "id2": "cone", "q1": [0, 0, 0, 0, 0, 0, 0], "q2": IDENTITY}
        assert client.post("/collide", json=body).status_code == 400

    def test_short_pose(self, client):
        body = {"id1": "box_cube", "id2": "cone", "q1": [1, 0, 0, 0, 0, 0], "q2": IDENTITY}
        assert client.post("/collide", json=body).status_code == 422


class TestPipelineRoutes:

    def test_gen_data_is_queued(self, client, monkeypatch):
        task = FakeTask()
        monkeypatch.setattr(pipeline_routes, "gen_data_task", task)
        response = client.post("/pipeline/gen-data", json={"gen": {"pairs": 50, "seed": 4}, "out": "data/x.bin"})
        assert response.status_code == 200
        assert response.json()["status"] == "queued"
        assert response.json()["task_id"] == "task-1"
        assert task.calls[0]["gen"]["pairs"] == 50
        assert task.calls[0]["out"] == "data/x.bin"

    def test_train_request_is_validated(self, client, monkeypatch):
        monkeypatch.setattr(pipeline_routes, "train_task", FakeTask())
        assert client.post("/pipeline/train", json={"data": "d.bin", "train": {"epochs": 0}}).status_code == 422
        assert client.post("/pipeline/train", json={"data": "d.bin"}).json()["command"] == "train"

    def test_queue_failure(self, client, monkeypatch):
        class Broken:
            def delay(self, payload):
                raise ConnectionError("broker unreachable")

        monkeypatch.setattr(pipeline_routes, "bench_task", Broken())
        response = client.post("/pipeline/bench", json={"known": "k.bin"})
        assert response.status_code == 500
        assert "broker unreachable" in response.json()["detail"]
