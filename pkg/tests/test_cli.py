import json
import os

import numpy as np
import pytest

from homoloss.cli import main
from homoloss.geometry import Pose
from homoloss.scene import parse_pose_list, write_pose_list, write_points


def read(path):
    with open(path) as f:
        return f.read()


def landscape_args(out, **over):
    args = {
        "--synthetic": None,
        "--axis": "tx",
        "--range": "-1:1",
        "--steps": "361",
        "--losses": "posenet,homography",
        "--out": out,
    }
    args.update(over)
    argv = ["landscape"]
    for k, v in args.items():
        # --flag=value form so negative sweep ranges survive argparse
        argv.append(k if v is None else f"{k}={v}")
    return argv


class TestLandscape:
    def test_rows_and_minimum(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(landscape_args(out)) == 0
        for kind in ("posenet", "homography_local"):
            lines = read(
                os.path.join(out, f"landscape_{kind}.csv")
            ).splitlines()
            assert lines[0] == "offset,loss_value"
            assert len(lines) == 362
            vals = [float(r.split(",")[1]) for r in lines[1:]]
            assert int(np.argmin(vals)) == 180
            # the gt quaternion is only unit to rounding, so the center
            # value carries a ~1e-31 normalization residue
            assert vals[180] < 1e-20

    def test_2d_grid(self, tmp_path):
        out = str(tmp_path / "o")
        argv = landscape_args(
            out, **{"--losses": "homography", "--steps": "5",
                    "--axis2": "roty", "--range2": "-10:10", "--steps2": "3"}
        )
        assert main(argv) == 0
        lines = read(
            os.path.join(out, "landscape_homography_local.csv")
        ).splitlines()
        assert lines[0] == "offset,offset2,loss_value"
        assert len(lines) == 1 + 5 * 3

    def test_deterministic_reruns(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert main(landscape_args(out, **{"--steps": "51"})) == 0
            outs.append(read(os.path.join(out, "landscape_posenet.csv")))
        assert outs[0] == outs[1]

    def test_manifest_replay_byte_identical(self, tmp_path):
        out = str(tmp_path / "o")
        assert main(landscape_args(out, **{"--steps": "51"})) == 0
        csv_path = os.path.join(out, "landscape_posenet.csv")
        first = read(csv_path)
        os.remove(csv_path)
        assert main(
            ["--from-manifest", os.path.join(out, "manifest.json")]
        ) == 0
        assert read(csv_path) == first

    def test_manifest_contents(self, tmp_path):
        out = str(tmp_path / "o")
        assert main(landscape_args(out, **{"--steps": "51"})) == 0
        m = json.loads(read(os.path.join(out, "manifest.json")))
        assert m["tool"] == "homoloss"
        assert m["command"] == "landscape"
        assert m["config"]["steps"] == 51


class TestGradcheck:
    def base(self, out, loss="homography", extra=()):
        return [
            "gradcheck", "--synthetic", "--loss", loss,
            "--samples", "20", "--out", out, *extra,
        ]

    def test_passes_default_tolerance(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(self.base(out)) == 0
        lines = read(os.path.join(out, "gradcheck.csv")).splitlines()
        assert lines[0] == "sample,loss_value,max_rel_err"
        assert len(lines) == 21
        assert "0 above tolerance" in capsys.readouterr().out

    def test_exit_3_on_unattainable_tolerance(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        code = main(self.base(out, extra=["--tolerance", "1e-15"]))
        assert code == 3
        assert "tolerance failure" in capsys.readouterr().err

    @pytest.mark.parametrize("loss", ["posenet", "geometric", "maxerror"])
    def test_other_losses(self, tmp_path, loss):
        out = str(tmp_path / loss)
        assert main(self.base(out, loss=loss)) == 0


class TestOptimize:
    def test_homoscedastic_csv_starts_at_init(self, tmp_path):
        out = str(tmp_path / "o")
        argv = [
            "optimize", "--synthetic", "--n-frames", "3", "--n-points", "40",
            "--loss", "homoscedastic", "--epochs", "3", "--out", out,
        ]
        assert main(argv) == 0
        lines = read(os.path.join(out, "run.csv")).splitlines()
        assert lines[0] == "epoch,mean_loss,train_mrd_px,s_t,s_q"
        first = lines[1].split(",")
        assert float(first[3]) == 0.0
        assert float(first[4]) == -3.0

    def test_outputs_and_summary(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        argv = [
            "optimize", "--synthetic", "--n-frames", "3", "--n-points", "40",
            "--loss", "homography", "--epochs", "50", "--lr", "1e-3",
            "--out", out,
        ]
        assert main(argv) == 0
        assert os.path.exists(os.path.join(out, "run.csv"))
        assert os.path.exists(os.path.join(out, "manifest.json"))
        with open(os.path.join(out, "final_poses.txt")) as f:
            poses = parse_pose_list(f)
        assert len(poses) == 3
        msg = capsys.readouterr().out
        assert "final_train_mrd_px=" in msg
        assert "pct_2m_2deg=" in msg

    def test_replay_byte_identical(self, tmp_path):
        out = str(tmp_path / "o")
        argv = [
            "optimize", "--synthetic", "--n-frames", "2", "--n-points", "40",
            "--loss", "posenet", "--epochs", "10", "--out", out,
        ]
        assert main(argv) == 0
        run_csv = os.path.join(out, "run.csv")
        poses_txt = os.path.join(out, "final_poses.txt")
        first = (read(run_csv), read(poses_txt))
        assert main(
            ["--from-manifest", os.path.join(out, "manifest.json")]
        ) == 0
        assert (read(run_csv), read(poses_txt)) == first


class TestSlabs:
    def test_local_table(self, tmp_path):
        out = str(tmp_path / "o")
        argv = ["slabs", "--synthetic", "--out", out]
        assert main(argv) == 0
        lines = read(os.path.join(out, "slabs.csv")).splitlines()
        assert lines[0] == "frame_id,x_min,x_max"
        assert len(lines) == 9  # 8 synthetic frames
        for row in lines[1:]:
            _, a, b = row.split(",")
            assert 0.0 < float(a) < float(b)

    def test_global_manual(self, tmp_path):
        out = str(tmp_path / "o")
        argv = ["slabs", "--synthetic", "--mode", "global",
                "--xmin", "1.5", "--xmax", "4", "--out", out]
        assert main(argv) == 0
        lines = read(os.path.join(out, "slabs.csv")).splitlines()
        assert lines[1] == "global,1.5,4"

    def test_histograms_cdf_nondecreasing(self, tmp_path):
        out = str(tmp_path / "o")
        argv = ["slabs", "--synthetic", "--n-frames", "2", "--hist",
                "--out", out]
        assert main(argv) == 0
        for fid in ("f000", "f001"):
            lines = read(os.path.join(out, f"hist_{fid}.csv")).splitlines()
            assert lines[0] == "depth,cumulative_count"
            depths = [float(r.split(",")[0]) for r in lines[1:]]
            counts = [int(r.split(",")[1]) for r in lines[1:]]
            assert depths == sorted(depths)
            assert counts == list(range(1, len(counts) + 1))


class TestEval:
    def write_scene_files(self, tmp_path):
        gt = [
            ("f0", Pose([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])),
            ("f1", Pose([1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])),
        ]
        est = [
            ("f0", Pose([0.1, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])),
            ("f1", Pose([5.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])),
        ]
        gt_path = str(tmp_path / "gt.txt")
        est_path = str(tmp_path / "est.txt")
        with open(gt_path, "w") as f:
            write_pose_list(f, gt)
        with open(est_path, "w") as f:
            write_pose_list(f, est)
        return gt_path, est_path

    def test_pct_metrics(self, tmp_path, capsys):
        gt_path, est_path = self.write_scene_files(tmp_path)
        out = str(tmp_path / "o")
        argv = ["eval", "--gt-poses", gt_path, "--est-poses", est_path,
                "--out", out]
        assert main(argv) == 0
        lines = read(os.path.join(out, "eval.csv")).splitlines()
        assert lines[0] == "metric,value"
        table = dict(r.split(",") for r in lines[1:])
        assert float(table["pct_2m_2deg"]) == 0.5
        assert float(table["pct_3m_5deg"]) == 0.5

    def test_with_points_reports_mrd(self, tmp_path):
        gt_path, est_path = self.write_scene_files(tmp_path)
        pts_path = str(tmp_path / "pts.txt")
        with open(pts_path, "w") as f:
            write_points(f, [[0.0, 0.0, 4.0], [0.5, 0.0, 5.0]],
                         {"f0": (0, 1), "f1": (0, 1)})
        out = str(tmp_path / "o")
        argv = ["eval", "--gt-poses", gt_path, "--est-poses", est_path,
                "--points", pts_path, "--out", out]
        assert main(argv) == 0
        lines = read(os.path.join(out, "eval.csv")).splitlines()
        assert lines[1].startswith("mean_reproj_distance_px,")
        assert float(lines[1].split(",")[1]) > 0.0

    def test_no_common_frames_exit_2(self, tmp_path, capsys):
        gt_path, _ = self.write_scene_files(tmp_path)
        other = str(tmp_path / "other.txt")
        with open(other, "w") as f:
            write_pose_list(f, [("zz", Pose.identity())])
        out = str(tmp_path / "o")
        argv = ["eval", "--gt-poses", gt_path, "--est-poses", other,
                "--out", out]
        assert main(argv) == 2


class TestExitCodes:
    def test_usage_error_unknown_loss(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        argv = ["gradcheck", "--synthetic", "--loss", "nope", "--out", out]
        assert main(argv) == 1
        assert "usage error" in capsys.readouterr().err

    def test_usage_error_no_subcommand(self, capsys):
        assert main([]) == 1

    def test_usage_error_missing_scene(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        argv = ["gradcheck", "--loss", "posenet", "--out", out]
        assert main(argv) == 1

    def test_parse_error_exit_2(self, tmp_path, capsys):
        bad = str(tmp_path / "bad.txt")
        with open(bad, "w") as f:
            f.write("f0 1 2 3\n")
        pts = str(tmp_path / "pts.txt")
        with open(pts, "w") as f:
            f.write("P 0 0 4\nV f0 0\n")
        out = str(tmp_path / "o")
        argv = ["slabs", "--poses", bad, "--points", pts, "--out", out]
        assert main(argv) == 2
        assert "line 1" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        argv = ["slabs", "--poses", str(tmp_path / "none.txt"),
                "--points", str(tmp_path / "none2.txt"), "--out", out]
        assert main(argv) == 2

    def test_bad_manifest_exit_2(self, tmp_path, capsys):
        bad = str(tmp_path / "m.json")
        with open(bad, "w") as f:
            f.write("{not json")
        assert main(["--from-manifest", bad]) == 2

    def test_bad_range_exit_1(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        argv = landscape_args(out, **{"--range": "oops"})
        assert main(argv) == 1
