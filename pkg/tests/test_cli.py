import socket
import threading
import time

import numpy as np
import pytest
from PIL import Image

from sketchshot.checkpoint import checkpoint_hash, load_checkpoint
from sketchshot.cli import main

TINY = ["--classes", "10", "--per-class", "30", "--image-size", "24",
        "--base-classes", "6", "--val-classes", "2", "--novel-classes", "2"]
TINY_TRAIN = TINY + ["--channels", "6,12", "--embed-dim", "16",
                     "--epochs1", "2", "--epochs2", "1",
                     "--episodes-per-epoch", "2", "--n-drop", "2",
                     "--k-shot", "2", "--q-per-class", "2"]


@pytest.fixture(scope="module")
def tiny_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "model.ckpt"
    assert main(["train", *TINY_TRAIN, "--seed", "7", "--out", str(path)]) == 0
    return path


def test_train_deterministic_checkpoint(tmp_path, tiny_ckpt):
    other = tmp_path / "again.ckpt"
    assert main(["train", *TINY_TRAIN, "--seed", "7", "--out", str(other)]) == 0
    assert checkpoint_hash(load_checkpoint(tiny_ckpt)) == \
        checkpoint_hash(load_checkpoint(other))


def test_train_stage1_only_writes_log(tmp_path):
    path = tmp_path / "s1.ckpt"
    log = tmp_path / "train.log"
    assert main(["train", *TINY_TRAIN, "--stage", "1", "--seed", "1",
                 "--out", str(path), "--log", str(log)]) == 0
    ckpt = load_checkpoint(path)
    assert "generator.value_proj" not in ckpt.params.entries
    lines = log.read_text().splitlines()
    assert any(line.startswith("stage1 epoch=") for line in lines)
    assert any("zero_fraction=" in line for line in lines)


def test_eval_writes_reports(tmp_path, tiny_ckpt):
    out = tmp_path / "reports"
    assert main(["eval", *TINY, "--checkpoint", str(tiny_ckpt), "--metric", "all",
                 "--way", "2", "--shots", "1", "--queries", "3", "--episodes", "4",
                 "--eval-seeds", "1", "--out", str(out)]) == 0
    for m in ("novel", "base", "both"):
        text = (out / f"report_{m}.txt").read_text()
        assert "mean:" in text
        mean = float([l for l in text.splitlines() if l.startswith("mean:")][0].split()[1])
        assert 0.0 <= mean <= 1.0


def test_eval_deterministic_report_bytes(tmp_path, tiny_ckpt):
    args = ["eval", *TINY, "--checkpoint", str(tiny_ckpt), "--metric", "novel",
            "--way", "2", "--shots", "1", "--queries", "3", "--episodes", "4",
            "--eval-seeds", "2"]
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert (out1 / "report_novel.txt").read_bytes() == (out2 / "report_novel.txt").read_bytes()


def test_ablate_no_gat_row(tmp_path):
    out = tmp_path / "ablation"
    assert main(["ablate", *TINY_TRAIN, "--variants", "full,no-gat",
                 "--metrics", "novel", "--shot-list", "1", "--way", "2",
                 "--queries", "3", "--episodes", "3", "--eval-seeds", "1",
                 "--seed", "3", "--out", str(out)]) == 0
    tsv = (out / "ablation.tsv").read_text().splitlines()
    assert tsv[0].startswith("variant\t")
    variants = {line.split("\t")[0] for line in tsv[1:]}
    assert variants == {"full", "no-gat"}
    assert (out / "ablation.txt").exists()


def test_make_data_round_trip(tmp_path):
    out = tmp_path / "dataset"
    assert main(["make-data", "--classes", "10", "--per-class", "30",
                 "--image-size", "16", "--out", str(out)]) == 0
    from sketchshot.data import load_directory

    ds = load_directory(out)
    assert ds.num_classes == 10
    assert len(ds.items) == 600


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def live_server(tiny_ckpt):
    import uvicorn

    from sketchshot.service import ServiceState, create_app

    state = ServiceState.load(tiny_ckpt)
    port = _free_port()
    config = uvicorn.Config(create_app(state), host="127.0.0.1", port=port,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    import httpx

    url = f"http://127.0.0.1:{port}"
    while time.time() < deadline:
        try:
            if httpx.get(url + "/health", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.05)
    else:
        raise RuntimeError("service did not come up")
    yield url
    server.should_exit = True
    thread.join(timeout=5)


def test_register_and_classify_subcommands(tmp_path, live_server, capsys):
    rng = np.random.default_rng(0)
    files = []
    for i in range(3):
        img = np.ones((24, 24), dtype=np.uint8) * 255
        img[6:18, 10 + i:12 + i] = 20
        f = tmp_path / f"sketch{i}.png"
        Image.fromarray(img).save(f)
        files.append(str(f))
    args = ["register", "--server", live_server, "--name", "stick"]
    for f in files:
        args += ["--image", f]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "stick" in out and "7 classes" in out

    photo = tmp_path / "photo.png"
    Image.fromarray(rng.integers(0, 255, size=(24, 24, 3), dtype=np.uint8)).save(photo)
    assert main(["classify", "--server", live_server, "--image", str(photo),
                 "--top", "3"]) == 0
    out = capsys.readouterr().out
    assert len(out.strip().splitlines()) == 3
