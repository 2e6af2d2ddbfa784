import json
import subprocess
import sys

import numpy as np
import pytest

from slic.cli import main
from slic.data import load_dataset, read_features
from slic.model import load_checkpoint

TRAIN = {"epochs": 3, "batch_size": 8, "cluster_interval": 2, "backbone_dims": [24, 12],
         "head_hidden": 12, "embed_dim": 6, "seed": 1}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    synth = {"num_classes": 3, "videos_per_class": 6, "clips_per_video": 3, "raw_dim": 12, "seed": 2}
    (d / "synth.json").write_text(json.dumps(synth))
    (d / "train.json").write_text(json.dumps(TRAIN))
    assert main(["synth", "--config", str(d / "synth.json"), "--out", str(d / "data")]) == 0
    synth["seed"] = 3
    (d / "synth2.json").write_text(json.dumps(synth))
    assert main(["synth", "--config", str(d / "synth2.json"), "--out", str(d / "test")]) == 0
    return d


def test_synth_writes_manifest(work):
    ds = load_dataset(work / "data" / "manifest.json")
    assert ds.features.shape == (18, 3, 2, 12) and ds.labels is not None


def test_cluster_raw_and_kmeans(work):
    out = work / "p.json"
    assert main(["cluster", "--data", str(work / "data/manifest.json"), "--method", "finch", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["method"] == "finch" and len(res["partitions"][0]) == 18
    assert len(res["nmi_vs_labels"]) == len(res["partitions"])
    for method in ("kmeans", "spherical"):
        assert main(["cluster", "--data", str(work / "data/manifest.json"), "--method", method,
                     "--k-clusters", "3", "--out", str(out)]) == 0
        assert max(json.loads(out.read_text())["partitions"][0]) == 2
    assert main(["cluster", "--data", str(work / "data/manifest.json"), "--method", "kmeans",
                 "--out", str(out)]) == 2


def test_train_eval_export_round(work):
    m = str(work / "data/manifest.json")
    t = str(work / "test/manifest.json")
    run = work / "run"
    assert main(["train", "--data", m, "--config", str(work / "train.json"), "--out", str(run),
                 "--eval-data", t, "--eval-every", "1"]) == 0
    assert (run / "metrics.csv").read_text().splitlines()[0] == \
        "epoch,mean_loss,nmi,num_clusters,fp_rate,fn_rate,recall1,recall5"
    resolved = json.loads((run / "config.resolved.json").read_text())
    assert resolved["epochs"] == 3 and resolved["eval_every"] == 1
    enc, header = load_checkpoint(run / "checkpoint.bin")
    assert header["epoch"] == 3 and enc.arch.embed_dim == 6

    rep = work / "report.json"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--train-data", m,
                 "--test-data", t, "--tap", "backbone", "--out", str(rep)]) == 0
    assert set(json.loads(rep.read_text())) == {"recall@1", "recall@5", "recall@10", "recall@20"}

    emb = work / "embs.bin"
    assert main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data", m,
                 "--policy", "uniform_avg:2", "--out", str(emb)]) == 0
    arr = read_features(emb, (18, 6))
    assert np.all(np.isfinite(arr))
    assert json.loads((work / "embs.json").read_text())["num_videos"] == 18
    assert main(["export-embeddings", "--checkpoint", str(run / "checkpoint.bin"), "--data", m,
                 "--policy", "mode", "--out", str(emb)]) == 2

    out = work / "pc.json"
    assert main(["cluster", "--data", m, "--checkpoint", str(run / "checkpoint.bin"), "--out", str(out)]) == 0


def test_train_cli_is_deterministic(work):
    m = str(work / "data/manifest.json")
    for name in ("r1", "r2"):
        assert main(["train", "--data", m, "--config", str(work / "train.json"), "--out", str(work / name)]) == 0
    for f in ("checkpoint.bin", "metrics.csv"):
        assert (work / "r1" / f).read_bytes() == (work / "r2" / f).read_bytes()


def test_ablate_components(work):
    out = work / "abl"
    assert main(["ablate", "--preset", "components", "--data", str(work / "data/manifest.json"),
                 "--config", str(work / "train.json"), "--out", str(out)]) == 0
    rows = (out / "ablation_components.csv").read_text().splitlines()
    assert len(rows) == 6 and (out / "ic_off.metrics.csv").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(work, tmp_path):
    m = str(work / "data/manifest.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 0}))
    assert main(["train", "--data", m, "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--data", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 3
    feat = tmp_path / "d"
    feat.mkdir()
    (feat / "manifest.json").write_text((work / "data/manifest.json").read_text())
    (feat / "features.bin").write_bytes((work / "data/features.bin").read_bytes()[:100])
    assert main(["cluster", "--data", str(feat / "manifest.json"), "--out", str(tmp_path / "p.json")]) == 3
    div = tmp_path / "div.json"
    div.write_text(json.dumps({**TRAIN, "lr": 1e300}))
    assert main(["train", "--data", m, "--config", str(div), "--out", str(tmp_path / "y")]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2


def test_module_entry_point(work):
    r = subprocess.run([sys.executable, "-m", "slic", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "export-embeddings" in r.stdout
