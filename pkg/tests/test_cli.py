import hashlib
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_ground, make_vehicle, oracle_hulls

from matrixgt import cli
from matrixgt import kitti_labels as kl
from matrixgt import scene_sim as ss

TINY_SCENARIO = """\
seed=31
frames=4
width=96
height=72
fx=100.0
fy=100.0
cx=48.0
cy=36.0
vehicle_count_min=1
vehicle_count_max=2
distractor_count_min=0
distractor_count_max=1
region_x_min=-4.0
region_x_max=4.0
region_z_min=8.0
region_z_max=20.0
emit_color=1
"""


def dir_digest(directory):
    digest = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(directory)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


@pytest.fixture
def tiny_dataset(tmp_path):
    scenario = tmp_path / "scenario.txt"
    scenario.write_text(TINY_SCENARIO)
    dataset = tmp_path / "ds"
    assert cli.main(["generate", "--scenario", str(scenario), "--out", str(dataset)]) == 0
    return dataset


class TestGenerate:
    def test_writes_all_files(self, tiny_dataset):
        assert (tiny_dataset / "manifest.txt").exists()
        for frame in range(4):
            for key, path in ss.frame_paths(tiny_dataset, frame).items():
                assert path.exists(), (frame, key)

    def test_byte_identical_reruns(self, tmp_path):
        scenario = tmp_path / "s.txt"
        scenario.write_text(TINY_SCENARIO)
        digests = []
        for name in ("one", "two"):
            out = tmp_path / name
            assert cli.main(["generate", "--scenario", str(scenario), "--out", str(out)]) == 0
            digests.append(dir_digest(out))
        assert digests[0] == digests[1]

    def test_workers_do_not_change_bytes(self, tmp_path):
        scenario = tmp_path / "s.txt"
        scenario.write_text(TINY_SCENARIO)
        out1, out8 = tmp_path / "w1", tmp_path / "w8"
        assert cli.main(["generate", "--scenario", str(scenario), "--out", str(out1), "--workers", "1"]) == 0
        assert cli.main(["generate", "--scenario", str(scenario), "--out", str(out8), "--workers", "8"]) == 0
        assert dir_digest(out1) == dir_digest(out8)

    def test_missing_seed_exits_2(self, tmp_path, capsys):
        scenario = tmp_path / "bad.txt"
        scenario.write_text("frames=2\n")
        assert cli.main(["generate", "--scenario", str(scenario), "--out", str(tmp_path / "o")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_missing_scenario_file_exits_3(self, tmp_path):
        assert cli.main(["generate", "--scenario", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]) == 3

    def test_frame_count_matches(self, tiny_dataset):
        assert ss.list_frame_indices(tiny_dataset) == [0, 1, 2, 3]


class TestAnnotate:
    def test_one_label_file_per_frame(self, tiny_dataset, tmp_path):
        labels = tmp_path / "labels"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)]) == 0
        assert sorted(p.name for p in labels.glob("*.txt")) == [f"00000{i}.txt" for i in range(4)]

    def test_worker_counts_identical(self, tiny_dataset, tmp_path):
        out1, out8 = tmp_path / "l1", tmp_path / "l8"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(out1), "--workers", "1"]) == 0
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(out8), "--workers", "8"]) == 0
        assert dir_digest(out1) == dir_digest(out8)

    def test_oracle_blindness_instance_files_deleted(self, tiny_dataset, tmp_path):
        with_instance = tmp_path / "with"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(with_instance)]) == 0
        for frame in range(4):
            ss.frame_paths(tiny_dataset, frame)["instance"].unlink()
        without = tmp_path / "without"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(without)]) == 0
        assert dir_digest(with_instance) == dir_digest(without)

    def test_missing_buffer_exits_3_naming_frame(self, tiny_dataset, tmp_path, capsys):
        ss.frame_paths(tiny_dataset, 2)["depth"].unlink()
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(tmp_path / "l")]) == 3
        assert "000002" in capsys.readouterr().err

    def test_missing_manifest_exits_3(self, tiny_dataset, tmp_path):
        (tiny_dataset / "manifest.txt").unlink()
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(tmp_path / "l")]) == 3

    def test_rho_flag_changes_output_determinism_kept(self, tiny_dataset, tmp_path):
        default = tmp_path / "default"
        wide = tmp_path / "wide"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(default)]) == 0
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(wide), "--rho", "0.4"]) == 0
        again = tmp_path / "again"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(again), "--rho", "0.4"]) == 0
        assert dir_digest(wide) == dir_digest(again)


class TestOracleLabels:
    def test_single_cube_hull(self, tmp_path, small_camera):
        dataset = tmp_path / "ds"
        dataset.mkdir()
        scene = [make_ground(z_far=40.0), make_vehicle(2, x=0.0, z=10.0)]
        bundle = ss.render_frame(small_camera, scene, 0, inflate_pct=0.1, emit_color=False)
        ss.write_frame_files(bundle, dataset)
        config = ss.ScenarioConfig(seed=1, frames=1, width=320, height=240, fx=260.0, fy=260.0,
                                   cx=160.0, cy=120.0, region_z_min=5.0, region_z_max=20.0,
                                   emit_color=False)
        (dataset / "manifest.txt").write_text(ss.manifest_text(config))
        labels_dir = tmp_path / "gt"
        assert cli.main(["oracle-labels", "--in", str(dataset), "--out", str(labels_dir)]) == 0
        labels = kl.parse_labels(labels_dir / "000000.txt")
        assert len(labels) == 1
        assert labels[0].bbox == oracle_hulls(bundle.instance_oracle)[2]
        assert labels[0].type == "Car"

    def test_fully_occluded_object_emits_nothing(self, tmp_path, small_camera):
        dataset = tmp_path / "ds"
        dataset.mkdir()
        scene = [
            make_vehicle(2, x=0.0, z=8.0, length=3.0, width=3.0, height=2.5, ground_y=2.8),
            make_vehicle(3, x=0.0, z=30.0, length=1.0, width=1.0, height=1.0, ground_y=2.0),
        ]
        bundle = ss.render_frame(small_camera, scene, 0, emit_color=False)
        ss.write_frame_files(bundle, dataset)
        config = ss.ScenarioConfig(seed=1, frames=1, width=320, height=240, fx=260.0, fy=260.0,
                                   cx=160.0, cy=120.0, region_z_min=5.0, region_z_max=35.0,
                                   emit_color=False)
        (dataset / "manifest.txt").write_text(ss.manifest_text(config))
        labels_dir = tmp_path / "gt"
        assert cli.main(["oracle-labels", "--in", str(dataset), "--out", str(labels_dir)]) == 0
        labels = kl.parse_labels(labels_dir / "000000.txt")
        assert len(labels) == 1  # only the visible near vehicle

    def test_label_count_equals_visible_vehicles(self, tiny_dataset, tmp_path):
        labels_dir = tmp_path / "gt"
        assert cli.main(["oracle-labels", "--in", str(tiny_dataset), "--out", str(labels_dir)]) == 0
        for frame in range(4):
            _, stencil, records, instance = ss.read_frame_buffers(tiny_dataset, frame, with_instance=True)
            vehicle_ids = {r.object_id for r in records if r.cls is ss.ObjectClass.VEHICLE}
            visible = {int(v) for v in np.unique(instance.data) if v != 0 and int(v) in vehicle_ids}
            labels = kl.parse_labels(kl.label_path(labels_dir, frame))
            assert len(labels) == len(visible)


class TestEvaluate:
    def test_self_evaluation_and_reports(self, tiny_dataset, tmp_path, capsys):
        labels = tmp_path / "labels"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)]) == 0
        out = tmp_path / "report"
        assert cli.main(["evaluate", "--det", str(labels), "--gt", str(labels), "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "Easy" in stdout
        csv = (out / "report.csv").read_text()
        assert csv.startswith("level,ap,tp,fp,fn,gt_count")
        assert (out / "report.txt").exists()

    def test_iou_flag_in_header(self, tiny_dataset, tmp_path, capsys):
        labels = tmp_path / "labels"
        cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)])
        assert cli.main(["evaluate", "--det", str(labels), "--gt", str(labels),
                         "--iou", "0.5", "--out", str(tmp_path / "r")]) == 0
        assert "0.5" in capsys.readouterr().out

    def test_mismatched_frame_sets_exit_4(self, tiny_dataset, tmp_path):
        labels = tmp_path / "labels"
        cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)])
        partial = tmp_path / "partial"
        partial.mkdir()
        (partial / "000000.txt").write_text((labels / "000000.txt").read_text())
        assert cli.main(["evaluate", "--det", str(partial), "--gt", str(labels),
                         "--out", str(tmp_path / "r")]) == 4

    def test_ap_method_flag(self, tiny_dataset, tmp_path, capsys):
        labels = tmp_path / "labels"
        cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)])
        assert cli.main(["evaluate", "--det", str(labels), "--gt", str(labels),
                         "--ap", "all", "--out", str(tmp_path / "r")]) == 0
        assert "all" in capsys.readouterr().out


class TestStats:
    def test_outputs_and_totals(self, tiny_dataset, tmp_path):
        labels = tmp_path / "labels"
        cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)])
        out = tmp_path / "stats"
        assert cli.main(["stats", "--labels", str(labels), "--out", str(out),
                         "--grid", "4x3", "--image", "96x72"]) == 0
        hist = (out / "detections_hist.csv").read_text().strip().splitlines()[1:]
        assert sum(int(line.split(",")[1]) for line in hist) == 4
        total_cars = sum(
            1 for f in range(4) for lab in kl.parse_labels(kl.label_path(labels, f)) if lab.type == "Car"
        )
        heatmap_total = sum(
            int(line.split(",")[2])
            for line in (out / "heatmap.csv").read_text().strip().splitlines()[1:]
        )
        assert heatmap_total == total_cars

    def test_rerun_byte_identical(self, tiny_dataset, tmp_path):
        labels = tmp_path / "labels"
        cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)])
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert cli.main(["stats", "--labels", str(labels), "--out", str(out), "--image", "96x72"]) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_empty_labels_dir(self, tmp_path):
        labels = tmp_path / "labels"
        labels.mkdir()
        out = tmp_path / "stats"
        assert cli.main(["stats", "--labels", str(labels), "--out", str(out)]) == 0
        assert "frames=0" in (out / "summary.txt").read_text()

    def test_bad_grid_exits_2(self, tmp_path):
        labels = tmp_path / "labels"
        labels.mkdir()
        assert cli.main(["stats", "--labels", str(labels), "--out", str(tmp_path / "s"),
                         "--grid", "nonsense"]) == 2

    def test_label_parse_failure_exits_2(self, tmp_path, capsys):
        labels = tmp_path / "labels"
        labels.mkdir()
        (labels / "000000.txt").write_text("Car 1 2\n")
        assert cli.main(["stats", "--labels", str(labels), "--out", str(tmp_path / "s")]) == 2
        assert "000000" in capsys.readouterr().err


class TestEntryPoint:
    def test_module_invocation(self):
        result = subprocess.run(
            [sys.executable, "-m", "matrixgt", "--help"], capture_output=True, text=True
        )
        assert result.returncode == 0
        assert "generate" in result.stdout

    def test_env_var_worker_fallback(self, tiny_dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("MATRIXGT_WORKERS", "2")
        labels = tmp_path / "labels"
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(labels)]) == 0
        ref = tmp_path / "ref"
        monkeypatch.delenv("MATRIXGT_WORKERS")
        assert cli.main(["annotate", "--in", str(tiny_dataset), "--out", str(ref)]) == 0
        assert dir_digest(labels) == dir_digest(ref)
