import csv
import json
import math

import numpy as np
import pytest

from repliscope.cli import main, run
from repliscope.intrinsic_dim import IdConfig, estimate_id
from repliscope.synthetic import DEFAULT_COMBOS, make_level, make_synthetic_experiment
from repliscope.vecstore import SpaceTag, VectorDataset, read_vds, write_vds

from oracles import fifty_fifty_fixture, rotated_cube


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    manifest, truth = make_synthetic_experiment(root)
    return manifest, truth


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestPreprocess:
    def test_three_images(self, image_dir, tmp_path, capsys):
        out = tmp_path / "d.vds"
        assert main(["preprocess", str(image_dir), str(out), "--resolution", "32"]) == 0
        assert read_vds(out).count == 3
        assert "count: 3" in capsys.readouterr().out

    def test_subsample_with_seed(self, image_dir, tmp_path):
        out = tmp_path / "d.vds"
        assert main(["--seed", "5", "preprocess", str(image_dir), str(out),
                     "--resolution", "16", "--subsample", "2"]) == 0
        assert read_vds(out).count == 2

    def test_npy_input(self, tmp_path, rng):
        np.save(tmp_path / "e.npy", rng.normal(size=(5, 7)))
        out = tmp_path / "e.vds"
        assert main(["preprocess", str(tmp_path / "e.npy"), str(out)]) == 0
        assert read_vds(out).space_tag == SpaceTag.EXTERNAL_EMBEDDING

    def test_unreadable_directory(self, tmp_path):
        assert main(["preprocess", str(tmp_path / "nope"), str(tmp_path / "x.vds")]) == 1

    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["preprocess", str(tmp_path / "empty"), str(tmp_path / "x.vds")]) == 1

    def test_unknown_flag(self, image_dir, tmp_path, capsys):
        assert main(["preprocess", str(image_dir), str(tmp_path / "x.vds"), "--bogus"]) == 2
        assert "usage" in capsys.readouterr().err


class TestReplication:
    def test_identical_files_alpha_zero(self, tmp_path, rng):
        path = write_vds(VectorDataset(rng.uniform(0, 255, size=(20, 12))), tmp_path / "t.vds")
        assert main(["--out-dir", str(tmp_path), "replication", str(path), str(path),
                     "--alpha", "0"]) == 0
        summary = json.loads((tmp_path / "replication_summary.json").read_text())
        assert summary["percentage"] == 100.0

    def test_fifty_fifty(self, tmp_path):
        train, gen = fifty_fifty_fixture(8.0)
        t = write_vds(VectorDataset(train), tmp_path / "t.vds")
        g = write_vds(VectorDataset(gen), tmp_path / "g.vds")
        res = run(["replication", str(t), str(g), "--alpha", "8", "--out-dir", str(tmp_path),
                   "--sweep", "8,24", "--montage"])
        assert res.exit_code == 0
        summary = json.loads((tmp_path / "replication_summary.json").read_text())
        assert summary == {"alpha": 8.0, "n_generated": 100, "percentage": 50.0}
        sweep = read_csv(tmp_path / "alpha_sweep.csv")
        assert [float(r["percentage"]) for r in sweep] == [50.0, 100.0]
        assert len(read_csv(tmp_path / "replication_samples.csv")) == 100

    def test_unsorted_sweep(self, tmp_path, rng):
        path = write_vds(VectorDataset(rng.normal(size=(4, 3))), tmp_path / "t.vds")
        assert main(["replication", str(path), str(path), "--alpha", "1",
                     "--sweep", "3,1", "--out-dir", str(tmp_path)]) == 2

    def test_default_alpha_refused_off_calibration(self, tmp_path, rng):
        path = write_vds(VectorDataset(rng.normal(size=(4, 3))), tmp_path / "t.vds")
        assert main(["replication", str(path), str(path), "--out-dir", str(tmp_path)]) == 2

    def test_space_mismatch(self, tmp_path, rng, capsys):
        vals = rng.normal(size=(4, 3))
        a = write_vds(VectorDataset(vals), tmp_path / "a.vds")
        b = write_vds(VectorDataset(vals, space_tag=SpaceTag.PIXEL_ZSCORED), tmp_path / "b.vds")
        assert main(["replication", str(a), str(b), "--alpha", "1", "--out-dir", str(tmp_path)]) == 1
        assert "space" in capsys.readouterr().err


def two_level_manifest(root, counts=(40, 16), sizes=(100, 200), dims=(2, 4), n_gen=64):
    rng = np.random.default_rng(11)
    levels = []
    for size, m, n_copies in zip(sizes, dims, counts):
        train, gen = make_level(rng, size, m, n_copies, n_gen)
        write_vds(train, root / f"t{size}.vds")
        write_vds(gen, root / f"g{size}.vds")
        levels.append({"size": size, "training_path": f"t{size}.vds",
                       "generated_path": f"g{size}.vds"})
    manifest = {"alpha": 50, "resolution": 8, "id_resolution": 8, "combos": [
        {"name": "two", "levels": levels},
        {"name": "one", "levels": levels[:1]},
    ]}
    (root / "m.json").write_text(json.dumps(manifest))
    return root / "m.json"


class TestAnalyze:
    def test_two_level_fit_and_single_level_skip(self, tmp_path, capsys):
        manifest = two_level_manifest(tmp_path)
        out = tmp_path / "out"
        assert main(["analyze", str(manifest), "--out-dir", str(out)]) == 0
        assert "single level" in capsys.readouterr().err

        # two points determine (B, C) in closed form
        mus = [estimate_id(read_vds(tmp_path / f"t{n}.vds"), IdConfig()).value for n in (100, 200)]
        pcts = [100 * 40 / 64, 100 * 16 / 64]
        B = (math.log(pcts[1]) - math.log(pcts[0])) / (mus[1] - mus[0])
        C = math.log(pcts[0]) - B * mus[0]

        fits = json.loads((out / "fits.json").read_text())
        by_name = {c["name"]: c["fits"] for c in fits["combos"]}
        assert by_name["one"] == []
        f1 = by_name["two"][0]
        assert f1["model"] == "f1"
        assert f1["B"] == pytest.approx(B, rel=1e-6)
        assert f1["C"] == pytest.approx(C, rel=1e-6)
        assert [f["model"] for f in by_name["two"]] == ["f1", "g", "f2"]
        assert len(read_csv(out / "points.csv")) == 3
        assert (out / "curve_f1_two.csv").exists() and (out / "curve_f2_two.csv").exists()

    def test_rerun_is_byte_identical(self, synthetic, tmp_path):
        manifest, _ = synthetic
        outputs = []
        for run_dir in ("r1", "r2"):
            out = tmp_path / run_dir
            assert main(["analyze", str(manifest), "--out-dir", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert outputs[0] == outputs[1]

    def test_missing_file(self, tmp_path, capsys):
        manifest = two_level_manifest(tmp_path)
        (tmp_path / "g200.vds").unlink()
        assert main(["analyze", str(manifest), "--out-dir", str(tmp_path / "o")]) == 1
        assert "g200.vds" in capsys.readouterr().err

    def test_default_alpha_needs_calibrated_space(self, tmp_path):
        manifest = two_level_manifest(tmp_path)
        raw = json.loads(manifest.read_text())
        del raw["alpha"]
        manifest.write_text(json.dumps(raw))
        assert main(["analyze", str(manifest), "--out-dir", str(tmp_path / "o")]) == 1


class TestPredict:
    def test_round_trip_through_size(self, tmp_path, capsys):
        a, c, b, s, beta, mu1 = 0.97, 100.0, 4.0, 20.0, 0.3, 12.0
        p = a ** (b * mu1 - c)
        size = s * math.exp(beta * mu1)
        assert main(["predict", "--shared-a", str(a), "--shared-c", str(c),
                     "--point", f"{mu1!r}:{p!r}", "--growth-s", str(s), "--growth-beta", str(beta),
                     "--pct-for-size", repr(size), "--out-dir", str(tmp_path)]) == 0
        out = json.loads((tmp_path / "prediction.json").read_text())
        assert out["value"] == pytest.approx(p, rel=1e-9)
        assert out["b"] == pytest.approx(b, rel=1e-12)

    def test_size_for_translation_level(self, tmp_path):
        a, c = 0.96, 100.0
        assert main(["predict", "--shared-a", str(a), "--shared-c", str(c), "--point", "10:5",
                     "--growth-s", "42", "--growth-beta", "0.25",
                     "--size-for-pct", repr(a ** -c), "--out-dir", str(tmp_path)]) == 0
        out = json.loads((tmp_path / "prediction.json").read_text())
        assert out["value"] == pytest.approx(42.0, rel=1e-9)

    def test_non_positive_point(self, tmp_path, capsys):
        assert main(["predict", "--shared-a", "0.97", "--shared-c", "100", "--point", "10:0",
                     "--pct-for-id", "12", "--out-dir", str(tmp_path)]) == 1
        assert "log" in capsys.readouterr().err

    def test_conflicting_flags(self, tmp_path):
        assert main(["predict", "--shared-a", "0.97", "--shared-c", "100", "--point", "10:5",
                     "--pct-for-id", "12", "--pct-for-size", "100"]) == 2
        assert main(["predict", "--shared-a", "0.97", "--shared-c", "100", "--pool-from", "x.json",
                     "--point", "10:5", "--pct-for-id", "12"]) == 2
        assert main(["predict", "--shared-a", "0.97", "--shared-c", "100", "--point", "10:5",
                     "--size-for-pct", "3"]) == 2

    def test_one_shot_from_pooled_analysis(self, synthetic, tmp_path):
        manifest, truth = synthetic
        held = DEFAULT_COMBOS[2].name
        assert main(["analyze", str(manifest), "--out-dir", str(tmp_path)]) == 0
        fits = tmp_path / "fits.json"
        size0, mu0, _, pct0 = truth[held][0]
        for size, mu, target, _ in truth[held][1:]:
            out_dir = tmp_path / f"p{size}"
            assert main(["predict", "--pool-from", str(fits), "--exclude", held,
                         "--point", f"{mu0!r}:{pct0!r}", "--pct-for-id", repr(mu),
                         "--out-dir", str(out_dir)]) == 0
            pred = json.loads((out_dir / "prediction.json").read_text())["value"]
            assert abs(pred - target) <= 0.5


class TestLoocv:
    def test_synthetic_manifest(self, synthetic, tmp_path):
        manifest, _ = synthetic
        assert main(["loocv", str(manifest), "--mode", "one-shot", "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "loocv_one_shot.csv")
        assert [r["combo"] for r in rows] == [c.name for c in DEFAULT_COMBOS] + ["median"]
        for r in rows:
            assert float(r["mae_f1_pct"]) < 0.5

    def test_full_mode_matches_analyze(self, synthetic, tmp_path):
        manifest, _ = synthetic
        assert main(["analyze", str(manifest), "--out-dir", str(tmp_path)]) == 0
        assert main(["loocv", str(manifest), "--mode", "full", "--out-dir", str(tmp_path)]) == 0
        fits = json.loads((tmp_path / "fits.json").read_text())
        r2 = {c["name"]: c["fits"][0]["r_squared"] for c in fits["combos"]}
        for row in read_csv(tmp_path / "loocv_full.csv")[:-1]:
            assert float(row["r_squared"]) == pytest.approx(r2[row["combo"]], rel=1e-5)

    def test_noiseless_points_give_zero_mae(self, tmp_path):
        path = tmp_path / "points.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["combo", "level_size", "mu1", "mu2", "replication_pct"])
            for name, b, s, beta, mus in [("A", 2.0, 30.0, 0.25, [10.0, 14.0, 18.0]),
                                          ("B", 3.0, 12.0, 0.3, [8.0, 12.0, 20.0]),
                                          ("C", 4.5, 50.0, 0.2, [6.0, 9.0, 13.0])]:
                for mu in mus:
                    # sizes chosen to be integers; mu1 then follows from g
                    size = round(s * math.exp(beta * mu))
                    mu_exact = math.log(size / s) / beta
                    pct = 0.97 ** (b * mu_exact - 100.0)
                    w.writerow([name, size, repr(mu_exact), size, repr(pct)])
        assert main(["loocv", "--points", str(path), "--out-dir", str(tmp_path)]) == 0
        for row in read_csv(tmp_path / "loocv_one_shot.csv"):
            assert abs(float(row["mae_f1_pct"])) <= 1e-9
            assert abs(float(row["mae_f2_pct"])) <= 1e-9
            assert abs(float(row["mae_f2inv_samples"])) <= 1e-6

    def test_single_combo(self, tmp_path):
        manifest = two_level_manifest(tmp_path)
        raw = json.loads(manifest.read_text())
        raw["combos"] = raw["combos"][:1]
        manifest.write_text(json.dumps(raw))
        assert main(["loocv", str(manifest), "--out-dir", str(tmp_path / "o")]) == 1


class TestId:
    def test_two_dimensional_manifold(self, tmp_path, capsys):
        path = write_vds(VectorDataset(rotated_cube(2000, 2, 48, seed=9),
                                       space_tag=SpaceTag.EXTERNAL_EMBEDDING), tmp_path / "m.vds")
        assert main(["id", str(path)]) == 0
        first = capsys.readouterr().out
        value = float(first.splitlines()[0].split(":")[1])
        assert 1.7 <= value <= 2.3
        assert main(["id", str(path)]) == 0
        assert capsys.readouterr().out == first

    def test_bad_k_order(self, tmp_path, rng):
        path = write_vds(VectorDataset(rng.normal(size=(30, 3))), tmp_path / "m.vds")
        assert main(["id", str(path), "--k1", "20", "--k2", "10"]) == 2

    def test_too_few_points(self, tmp_path, rng, capsys):
        path = write_vds(VectorDataset(rng.normal(size=(15, 3)),
                                       space_tag=SpaceTag.EXTERNAL_EMBEDDING), tmp_path / "m.vds")
        assert main(["id", str(path)]) == 1
        assert "21" in capsys.readouterr().err

    def test_full_res_vs_downscaled(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        train, _ = make_level(rng, 300, 3, 0, 1, side=16)
        path = write_vds(train, tmp_path / "t.vds")
        assert main(["id", str(path), "--id-resolution", "8"]) == 0
        assert "dim: 192" in capsys.readouterr().out
        assert main(["id", str(path), "--id-resolution", "8", "--full-res",
                     "--per-point", str(tmp_path / "pp.csv")]) == 0
        assert "dim: 768" in capsys.readouterr().out
        assert (tmp_path / "pp.csv").exists()


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == "0.1.0"


def test_no_command():
    assert main([]) == 2
