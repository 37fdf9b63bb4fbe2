import io
import json
import time

import pytest
import torch
from fastapi.testclient import TestClient

from motionedit import bench
from motionedit.flowio import read_flo, write_flo
from motionedit.images import save_png
from motionedit.service import create_app

FAST_CONFIG = {
    "num_candidates": 2,
    "recursion_steps": 2,
    "estimator": {"pyramid_levels": 2, "iterations_per_level": 8, "warp_updates_per_level": 1},
}


@pytest.fixture(scope="module")
def world():
    spec = bench.ShapesDatasetSpec()
    return spec, bench.gen_shapes_dataset(spec)


@pytest.fixture()
def client(tmp_path, world):
    app = create_app(max_workers=2, data_dir=tmp_path, dataset=world[1])
    with TestClient(app) as c:
        yield c


def upload_image(client, img):
    buf = io.BytesIO()
    import numpy as np
    from PIL import Image as PILImage

    from motionedit.grid import to_display

    arr = (to_display(img).clamp(0, 1).numpy() * 255).round().astype(np.uint8)
    PILImage.fromarray(arr).save(buf, format="PNG")
    r = client.post("/api/images", content=buf.getvalue())
    assert r.status_code == 200, r.text
    return r.json()["image_id"]


def wait_done(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        st = client.get(f"/api/jobs/{job_id}").json()
        if st["state"] in ("done", "failed"):
            return st
        time.sleep(0.2)
    raise AssertionError("job did not finish in time")


def test_image_upload_roundtrip(client, world):
    img = world[1].images[0]
    image_id = upload_image(client, img)
    r = client.get(f"/api/images/{image_id}")
    assert r.status_code == 200
    assert r.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_image_upload_rejects_garbage(client):
    assert client.post("/api/images", content=b"not a png").status_code == 400
    assert client.post("/api/images", content=b"").status_code == 400


def test_flow_synthesis_matches_cli_bytes(client, tmp_path):
    doc = {
        "extent": [16, 16],
        "dilation_radius": 1,
        "primitives": [{"kind": "translation", "params": {"d": [2.0, -1.0]}, "mask_rect": [2, 2, 9, 9]}],
    }
    r = client.post("/api/flows/synthesize", json=doc)
    assert r.status_code == 200, r.text
    flow_id = r.json()["flow_id"]
    served = client.get(f"/api/flows/{flow_id}").content

    from motionedit.flowsynth import apply_spec, spec_from_dict

    write_flo(tmp_path / "ref.flo", apply_spec(spec_from_dict(doc)))
    assert served == (tmp_path / "ref.flo").read_bytes()

    preview = client.get(f"/api/flows/{flow_id}/preview")
    assert preview.status_code == 200
    assert preview.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_flow_synthesis_rejects_unknown_fields(client):
    r = client.post(
        "/api/flows/synthesize",
        json={"extent": [8, 8], "primitives": [], "surprise": 1},
    )
    assert r.status_code == 422
    r = client.post(
        "/api/flows/synthesize",
        json={"extent": [8, 8], "primitives": [{"kind": "vortex", "params": {}}]},
    )
    assert r.status_code == 400


def test_unknown_ids_are_404(client):
    assert client.get("/api/flows/deadbeef").status_code == 404
    assert client.get("/api/images/deadbeef").status_code == 404
    assert client.get("/api/jobs/deadbeef").status_code == 404


def test_job_validation(client, world):
    image_id = upload_image(client, world[1].images[0])
    r = client.post("/api/jobs", json={"kind": "teleport"})
    assert r.status_code == 400
    r = client.post("/api/jobs", json={"kind": "sample", "source_image_id": image_id})
    assert r.status_code == 400  # missing flow
    r = client.post("/api/jobs", json={"kind": "sample", "surprise": True})
    assert r.status_code == 422  # unknown field
    # bad config field rejected before the job is queued
    zero = client.post("/api/flows/synthesize", json={"extent": [64, 64], "primitives": []})
    r = client.post(
        "/api/jobs",
        json={
            "kind": "sample",
            "source_image_id": image_id,
            "flow_id": zero.json()["flow_id"],
            "config": {"bogus": 1},
        },
    )
    assert r.status_code == 400
    assert "bogus" in r.text


def test_zero_flow_sample_job_reproduces_source(client, world):
    spec, ds = world
    image_id = upload_image(client, ds.images[3])
    zero = client.post("/api/flows/synthesize", json={"extent": [64, 64], "primitives": []})
    flow_id = zero.json()["flow_id"]
    payload = {
        "kind": "sample",
        "source_image_id": image_id,
        "flow_id": flow_id,
        "config": FAST_CONFIG,
        "num_steps": 10,
    }
    job_id = client.post("/api/jobs", json=payload).json()["job_id"]
    st = wait_done(client, job_id)
    assert st["state"] == "done", st
    assert st["progress"]["t"] == st["progress"]["total"] == 10

    result = client.get(f"/api/jobs/{job_id}/result")
    assert result.status_code == 200
    trace = client.get(f"/api/jobs/{job_id}/trace").json()
    assert len(trace["final_losses"]) == 2
    # zero target flow: empty edit mask, output equals the source exactly
    import numpy as np
    from PIL import Image as PILImage

    out = np.asarray(PILImage.open(io.BytesIO(result.content)))
    src = np.asarray(PILImage.open(io.BytesIO(client.get(f"/api/images/{image_id}").content)))
    assert np.array_equal(out, src)

    # identical payload: same job id, no second execution
    again = client.post("/api/jobs", json=payload).json()
    assert again["job_id"] == job_id
    assert again["state"] == "done"


def test_estimate_job(client, world):
    spec, ds = world
    a = upload_image(client, ds.images[0])
    b = upload_image(client, ds.images[1])
    job_id = client.post(
        "/api/jobs", json={"kind": "estimate", "source_image_id": a, "target_image_id": b}
    ).json()["job_id"]
    st = wait_done(client, job_id)
    assert st["state"] == "done"
    assert st["outputs"]["flow"] == "flow.flo"


def test_baseline_job(client, world):
    spec, ds = world
    image_id = upload_image(client, ds.images[0])
    zero = client.post("/api/flows/synthesize", json={"extent": [64, 64], "primitives": []})
    job_id = client.post(
        "/api/jobs",
        json={
            "kind": "baseline",
            "source_image_id": image_id,
            "flow_id": zero.json()["flow_id"],
            "num_steps": 10,
            "baseline": {"method": "sdedit", "t0_fraction": 0.3},
        },
    ).json()["job_id"]
    st = wait_done(client, job_id)
    assert st["state"] == "done", st
    assert client.get(f"/api/jobs/{job_id}/result").status_code == 200


def test_progress_increases_and_cancellation(client, world):
    spec, ds = world
    case = bench.gen_translation_benchmark(ds, spec, 1, seed=0)[0]
    image_id = upload_image(client, ds.images[case.source_index])
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".flo") as fh:
        write_flo(fh.name, case.flow)
        fh.seek(0)
        # slow job: default estimator and enough steps to observe progress
        doc = {
            "extent": [64, 64],
            "primitives": [
                {"kind": "translation", "params": {"d": list(map(float, case.displacement))},
                 "mask_rect": [0, 0, 64, 64]},
            ],
        }
    flow_id = client.post("/api/flows/synthesize", json=doc).json()["flow_id"]
    job_id = client.post(
        "/api/jobs",
        json={
            "kind": "sample",
            "source_image_id": image_id,
            "flow_id": flow_id,
            "config": {**FAST_CONFIG, "num_candidates": 1, "recursion_steps": 3},
            "num_steps": 40,
        },
    ).json()["job_id"]

    seen = []
    deadline = time.time() + 60
    while len(seen) < 2 and time.time() < deadline:
        st = client.get(f"/api/jobs/{job_id}").json()
        if st["state"] == "running" and st["progress"]["t"] > 0:
            if not seen or st["progress"]["t"] > seen[-1]:
                seen.append(st["progress"]["t"])
        time.sleep(0.1)
    assert len(seen) >= 2 and seen[1] > seen[0]

    st = client.delete(f"/api/jobs/{job_id}").json()
    assert st["state"] == "failed"
    assert st["error"] == "cancelled"
    frozen = client.get(f"/api/jobs/{job_id}").json()["progress"]["t"]
    time.sleep(1.0)
    assert client.get(f"/api/jobs/{job_id}").json()["progress"]["t"] == frozen
    assert client.get(f"/api/jobs/{job_id}/result").status_code == 409
