"""Command line behaviour: exit codes, printed lines, corruption."""

import numpy as np
import pytest

from h36m_exporter import cli


def tree(root):
    sdir = root / "S5"
    sdir.mkdir(parents=True)
    rng = np.random.default_rng(0)
    rows = np.zeros((40, 99))
    rows[:, 3:] = 0.2 * rng.standard_normal((40, 96))
    np.savetxt(sdir / "walking_1.txt", rows, delimiter=",", fmt="%.9f")


def test_export_validate_roundtrip(tmp_path, capsys):
    tree(tmp_path / "src")
    code = cli.main(["export", "--src", str(tmp_path / "src"),
                     "--out", str(tmp_path / "out"), "--split", "test"])
    assert code == 0
    assert "test: 1 clips" in capsys.readouterr().out
    assert cli.main(["validate", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "1/1 files pass" in out and "K=22 fps=25" in out


def test_validate_flags_corruption(tmp_path, capsys):
    tree(tmp_path / "src")
    cli.main(["export", "--src", str(tmp_path / "src"),
              "--out", str(tmp_path / "out"), "--split", "test"])
    capsys.readouterr()
    clip = tmp_path / "out" / "test" / "S5_walking_1.motb"
    clip.write_bytes(clip.read_bytes()[:-4])
    assert cli.main(["validate", str(tmp_path / "out")]) == cli.EXIT_INVALID
    out = capsys.readouterr().out
    assert "FAIL" in out and "truncated" in out and "0/1 files pass" in out


def test_empty_split_exits_3(tmp_path, capsys):
    tree(tmp_path / "src")
    code = cli.main(["export", "--src", str(tmp_path / "src"),
                     "--out", str(tmp_path / "o"), "--split", "val"])
    assert code == cli.EXIT_EXPORT
    assert "no clips" in capsys.readouterr().err


def test_missing_source_exits_3(tmp_path, capsys):
    code = cli.main(["export", "--src", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o"), "--split", "test"])
    assert code == cli.EXIT_EXPORT
    assert "no S*" in capsys.readouterr().err


def test_validate_empty_dir_fails(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path)]) == cli.EXIT_INVALID
    assert "no .motb" in capsys.readouterr().err


def test_help_and_usage_exit_codes(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "export" in text and "validate" in text and "exit codes" in text
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus"])
    assert exc.value.code == 2
