import subprocess
import sys

import numpy as np
import pytest

from tvnmf.cli import main, read_list
from tvnmf.model_io import load_model, load_ubm, read_matrix
from tvnmf.spectrogram import AudioBuffer, write_wav


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--d", "4", "--k", "3", "--s", "2", "--utterances", "12",
                 "--frames", "30", "--seed", "1", "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    lst = str(corpus_dir / "list.txt")
    assert main(["train-ubm", "--list", lst, "--k", "3", "--iters", "40", "--seed", "7",
                 "--out", str(root / "ubm")]) == 0
    assert main(["train-tvm", "--list", lst, "--ubm", str(root / "ubm"), "--s", "2",
                 "--em-iters", "3", "--out", str(root / "model")]) == 0
    return root


def test_synth_layout(corpus_dir):
    files = sorted(corpus_dir.glob("utt_*.mat"))
    assert len(files) == 12
    for name in ["w.mat", "T.mat", "q.mat", "labels.mat"]:
        assert (corpus_dir / "truth" / name).is_file()
    assert read_matrix(corpus_dir / "truth" / "T.mat").shape == (12, 2)
    V = read_matrix(files[0])
    assert V.shape == (4, 30) and np.all(V > 0)


def test_synth_count_contract(tmp_path):
    assert main(["synth", "--utterances", "200", "--frames", "100", "--out-dir",
                 str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("utt_*.mat"))) == 200
    assert (tmp_path / "truth").is_dir()


def test_synth_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out-dir", str(blocker / "sub")]) == 1


def test_train_ubm_outputs(trained, capsys):
    W, fields = load_ubm(trained / "ubm")
    assert W.shape == (4, 3)
    assert fields["lambda"] == "0.1" and fields["fft_size"] == "256"
    assert "s" not in fields


def test_train_ubm_deterministic(corpus_dir, tmp_path, trained, capsys):
    assert main(["train-ubm", "--list", str(corpus_dir / "list.txt"), "--k", "3", "--iters",
                 "40", "--seed", "7", "--out", str(tmp_path / "again")]) == 0
    out = capsys.readouterr().out
    assert "final cost" in out and "iterations" in out
    assert ((tmp_path / "again" / "w_ubm.mat").read_bytes()
            == (trained / "ubm" / "w_ubm.mat").read_bytes())


def test_train_ubm_missing_file(tmp_path, capsys):
    lst = tmp_path / "list.txt"
    lst.write_text("# comment\nmissing_utt.mat\n")
    assert main(["train-ubm", "--list", str(lst), "--out", str(tmp_path / "u")]) == 1
    assert "missing_utt.mat" in capsys.readouterr().err
    assert not (tmp_path / "u").exists()


def test_list_comments_and_relative_paths(tmp_path):
    (tmp_path / "a.mat").write_bytes(b"")
    lst = tmp_path / "l.txt"
    lst.write_text("# header\n\na.mat\n")
    assert read_list(lst) == [tmp_path / "a.mat"]
    lst.write_text("# only comments\n")
    with pytest.raises(ValueError, match="empty"):
        read_list(lst)


def test_train_tvm_prints_objective(corpus_dir, trained, tmp_path, capsys):
    assert main(["train-tvm", "--list", str(corpus_dir / "list.txt"), "--ubm",
                 str(trained / "ubm"), "--s", "2", "--em-iters", "4", "--jobs", "2",
                 "--out", str(tmp_path / "m")]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("iter")]
    values = np.array([float(l.split()[-1]) for l in lines])
    assert len(values) == 5
    assert np.all(np.diff(values) >= -1e-6 * np.abs(values[:-1]))
    assert load_model(tmp_path / "m").dims == (4, 3, 2)


def test_train_tvm_jobs_invariant(corpus_dir, trained, tmp_path):
    args = ["train-tvm", "--list", str(corpus_dir / "list.txt"), "--ubm",
            str(trained / "ubm"), "--s", "2", "--em-iters", "3"]
    assert main(args + ["--jobs", "3", "--out", str(tmp_path / "m3")]) == 0
    for c in range(3):
        name = f"t_block_{c}.mat"
        assert (tmp_path / "m3" / name).read_bytes() == (trained / "model" / name).read_bytes()


def test_em_iters_zero_is_usage_error(trained, corpus_dir):
    with pytest.raises(SystemExit) as exc:
        main(["train-tvm", "--list", str(corpus_dir / "list.txt"), "--ubm",
              str(trained / "ubm"), "--em-iters", "0", "--out", "x"])
    assert exc.value.code == 2


def test_train_tvm_dim_mismatch(trained, tmp_path, rng):
    from tvnmf.model_io import write_matrix

    write_matrix(tmp_path / "bad.mat", rng.random((5, 10)) + 0.1)
    (tmp_path / "l.txt").write_text("bad.mat\n")
    assert main(["train-tvm", "--list", str(tmp_path / "l.txt"), "--ubm",
                 str(trained / "ubm"), "--s", "2", "--out", str(tmp_path / "m")]) == 1
    assert not (tmp_path / "m").exists()


def test_extract_mat1_and_ivec(trained, corpus_dir, tmp_path):
    out = tmp_path / "feat.mat"
    assert main(["extract", "--model", str(trained / "model"), "--in",
                 str(corpus_dir / "utt_00000.mat"), "--out", str(out)]) == 0
    F = read_matrix(out)
    q = read_matrix(str(out) + ".ivec")
    assert F.shape == (3, 30) and q.shape == (1, 2)
    assert F.min() >= np.log(1e-12)


def test_extract_ascii(trained, corpus_dir, tmp_path):
    out = tmp_path / "feat.txt"
    assert main(["extract", "--model", str(trained / "model"), "--in",
                 str(corpus_dir / "utt_00001.mat"), "--out", str(out), "--format",
                 "ascii"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 30
    assert all(len(line.split()) == 3 for line in lines)
    binary = tmp_path / "feat.mat"
    main(["extract", "--model", str(trained / "model"), "--in",
          str(corpus_dir / "utt_00001.mat"), "--out", str(binary)])
    np.testing.assert_array_equal(np.loadtxt(out).T, read_matrix(binary))


def test_extract_deterministic(trained, corpus_dir, tmp_path):
    for name in ("a.mat", "b.mat"):
        assert main(["extract", "--model", str(trained / "model"), "--in",
                     str(corpus_dir / "utt_00002.mat"), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.mat").read_bytes() == (tmp_path / "b.mat").read_bytes()
    assert (tmp_path / "a.mat.ivec").read_bytes() == (tmp_path / "b.mat.ivec").read_bytes()


def test_extract_batch(trained, corpus_dir, tmp_path):
    assert main(["extract", "--model", str(trained / "model"), "--list",
                 str(corpus_dir / "list.txt"), "--out-dir", str(tmp_path / "o"),
                 "--jobs", "2"]) == 0
    assert len(list((tmp_path / "o").glob("*.mat"))) == 12
    assert len(list((tmp_path / "o").glob("*.ivec"))) == 12
    single = tmp_path / "single.mat"
    main(["extract", "--model", str(trained / "model"), "--in",
          str(corpus_dir / "utt_00003.mat"), "--out", str(single)])
    assert single.read_bytes() == (tmp_path / "o" / "utt_00003.mat").read_bytes()


def test_extract_failure_leaves_nothing(trained, tmp_path, rng):
    from tvnmf.model_io import write_matrix

    write_matrix(tmp_path / "bad.mat", rng.random((7, 10)) + 0.1)
    out = tmp_path / "out.mat"
    assert main(["extract", "--model", str(trained / "model"), "--in",
                 str(tmp_path / "bad.mat"), "--out", str(out)]) == 1
    assert not out.exists() and not (tmp_path / "out.mat.ivec").exists()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.mat"]


def test_extract_bad_model(tmp_path, corpus_dir):
    assert main(["extract", "--model", str(tmp_path / "nope"), "--in",
                 str(corpus_dir / "utt_00000.mat"), "--out", str(tmp_path / "f")]) == 1


def test_extract_needs_matching_io_flags(trained):
    with pytest.raises(SystemExit) as exc:
        main(["extract", "--model", str(trained / "model"), "--in", "x.wav",
              "--out-dir", "d"])
    assert exc.value.code == 2


def test_wav_pipeline(tmp_path, rng):
    sr = 16000
    names = []
    for u in range(3):
        t = np.arange(sr // 4) / sr
        x = 0.3 * np.sin(2 * np.pi * (300 + 200 * u) * t) + 0.05 * rng.standard_normal(t.size)
        write_wav(tmp_path / f"u{u}.wav", AudioBuffer(np.clip(x, -1, 1), sr))
        names.append(f"u{u}.wav")
    (tmp_path / "wavs.txt").write_text("\n".join(names) + "\n")
    assert main(["train-ubm", "--list", str(tmp_path / "wavs.txt"), "--k", "4", "--iters",
                 "20", "--out", str(tmp_path / "ubm")]) == 0
    assert main(["train-tvm", "--list", str(tmp_path / "wavs.txt"), "--ubm",
                 str(tmp_path / "ubm"), "--s", "3", "--em-iters", "2", "--out",
                 str(tmp_path / "model")]) == 0
    assert main(["extract", "--model", str(tmp_path / "model"), "--in",
                 str(tmp_path / "u0.wav"), "--out", str(tmp_path / "f.mat")]) == 0
    F = read_matrix(tmp_path / "f.mat")
    assert F.shape == (4, 1 + (sr // 4 - 256) // 128)


def test_log_env_quiet(corpus_dir, tmp_path):
    env = {"TVNMF_LOG": "quiet", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "tvnmf.cli", "train-ubm", "--list",
         str(corpus_dir / "list.txt"), "--k", "2", "--iters", "3", "--out",
         str(tmp_path / "u")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert proc.stderr == ""
    assert "final cost" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "tvnmf.cli", "bogus"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 2
