"""Command line front end.

Subcommands: ``train-ubm``, ``train-tvm``, ``extract`` and ``synth``.
Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
error. Diagnostics go to standard error; verbosity is set by the
``TVNMF_LOG`` environment variable (``quiet``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import linalg

from . import model_io, synth
from .features import extract_features
from .nmf import DEFAULT_EPSILON, NmfConfig, factorize, infer_activations, normalize_columns
from .spectrogram import (
    DEFAULT_FFT_SIZE,
    DEFAULT_FLOOR,
    DEFAULT_HOP,
    compute_spectrogram,
    load_wav,
)
from .tvm import CovarianceAccumulator, compute_stats, precompute, train_tvm

logger = logging.getLogger("tvnmf")

_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LOG_LEVELS.get(os.environ.get("TVNMF_LOG", "info").lower(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tvnmf")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


# -- corpus handling -------------------------------------------------------

def read_list(path):
    """Paths from an utterance list; relative entries resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"{path}: cannot read utterance list ({exc.strerror})") from exc
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        entries.append(p if p.is_absolute() else path.parent / p)
    if not entries:
        raise ValueError(f"{path}: utterance list is empty")
    for p in entries:
        if not p.is_file():
            raise ValueError(f"{p}: no such file")
    return entries


def load_spectrogram(path, fft_size=DEFAULT_FFT_SIZE, hop=DEFAULT_HOP, floor=DEFAULT_FLOOR):
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return compute_spectrogram(load_wav(path), fft_size, hop, floor)
    V = model_io.read_matrix(path)
    return np.maximum(V, floor)


class Corpus(Sequence):
    """Spectrograms loaded from disk on every access unless ``cache`` is set."""

    def __init__(self, paths, fft_size, hop, floor, n_rows=None, cache=False):
        self.paths = list(paths)
        self.fft_size, self.hop, self.floor = fft_size, hop, floor
        self.n_rows = n_rows
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        V = load_spectrogram(self.paths[i], self.fft_size, self.hop, self.floor)
        if self.n_rows is None:
            self.n_rows = V.shape[0]
        elif V.shape[0] != self.n_rows:
            raise ValueError(
                f"{self.paths[i]}: dimension mismatch, {V.shape[0]} rows != {self.n_rows}"
            )
        if self._cache is not None:
            self._cache[i] = V
        return V


def _nmf_config(fields):
    return NmfConfig(
        k=int(fields["k"]),
        lam=float(fields.get("lambda", 0.1)),
        max_iters=int(fields.get("nmf_max_iters", 200)),
        rel_tol=float(fields.get("nmf_rel_tol", 1e-5)),
        seed=int(fields.get("nmf_seed", 0)),
        epsilon=float(fields.get("epsilon", DEFAULT_EPSILON)),
    )


def _stft_settings(fields):
    return (int(fields.get("fft_size", DEFAULT_FFT_SIZE)),
            int(fields.get("hop", DEFAULT_HOP)),
            float(fields.get("floor", DEFAULT_FLOOR)))


def _map(fn, items, jobs):
    if jobs <= 1:
        yield from map(fn, items)
        return
    # executor.map yields in submission order, so reductions stay deterministic
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, items)


# -- commands --------------------------------------------------------------

def cmd_train_ubm(args):
    paths = read_list(args.list)
    corpus = Corpus(paths, args.fft_size, args.hop, args.floor, cache=args.cache)
    cfg = NmfConfig(k=args.k, lam=args.lam, max_iters=args.iters, rel_tol=args.rel_tol,
                    seed=args.seed, epsilon=args.epsilon)
    logger.info("training UBM dictionary on %d utterances, k=%d", len(corpus), cfg.k)
    W, _, trace = factorize(corpus, cfg)
    model_io.save_ubm(args.out, W, {
        "lambda": repr(cfg.lam),
        "epsilon": repr(cfg.epsilon),
        "created_by": "tvnmf train-ubm",
        "fft_size": args.fft_size,
        "hop": args.hop,
        "floor": repr(args.floor),
        "nmf_max_iters": cfg.max_iters,
        "nmf_rel_tol": repr(cfg.rel_tol),
        "nmf_seed": cfg.seed,
    })
    print(f"final cost {trace[-1]!r} after {len(trace) - 1} iterations")
    print(f"d={W.shape[0]} k={W.shape[1]}")
    return 0


def cmd_train_tvm(args):
    W, fields = model_io.load_ubm(args.ubm)
    cfg = _nmf_config(fields)
    fft_size, hop, floor = _stft_settings(fields)
    corpus = Corpus(read_list(args.list), fft_size, hop, floor, n_rows=W.shape[0])

    def utterance_stats(i):
        V = corpus[i]
        H = normalize_columns(infer_activations(V, W, cfg), cfg.epsilon)
        return V, H, compute_stats(V, W, H)

    acc = CovarianceAccumulator(W, diagonal=args.diagonal)
    stats = []
    for V, H, st in _map(utterance_stats, range(len(corpus)), args.jobs):
        acc.add(V, H)
        stats.append(st)
    sigma = acc.finalize()
    model, trace = train_tvm(stats, W, sigma, args.s, args.em_iters, args.seed)
    for i, value in enumerate(trace):
        print(f"iter {i} objective {value!r}")
    meta = {key: value for key, value in fields.items()
            if key not in ("format_version", "d", "k", "s")}
    meta.update({"created_by": "tvnmf train-tvm", "em_iters": args.em_iters,
                 "tvm_seed": args.seed})
    model.meta = meta
    model_io.save_model(args.out, model)
    d, k, s = model.dims
    print(f"d={d} k={k} s={s} T={k * d}x{s}")
    return 0


def _write_outputs(out, features, ivector, fmt):
    """Write features and ``<out>.ivec`` so that either both appear or neither."""
    out = Path(out)
    ivec = Path(str(out) + ".ivec")
    tmp_dir = Path(tempfile.mkdtemp(dir=out.parent, prefix=".extract."))
    try:
        tmp_feat = tmp_dir / "features"
        if fmt == "ascii":
            model_io.write_ascii(tmp_feat, features)
        else:
            model_io.write_matrix(tmp_feat, features)
        model_io.write_matrix(tmp_dir / "ivec", ivector[None, :])
        os.replace(tmp_feat, out)
        try:
            os.replace(tmp_dir / "ivec", ivec)
        except OSError:
            out.unlink(missing_ok=True)
            raise
    finally:
        for p in tmp_dir.iterdir():
            p.unlink()
        tmp_dir.rmdir()


def cmd_extract(args):
    model = model_io.load_model(args.model)
    fields = {**model.meta, "k": model.dims[1]}
    cfg = _nmf_config(fields)
    fft_size, hop, floor = _stft_settings(fields)
    pre = precompute(model)

    if args.inp is not None:
        jobs = [(Path(args.inp), Path(args.out))]
    else:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        suffix = ".txt" if args.format == "ascii" else ".mat"
        jobs = [(p, out_dir / (p.stem + suffix)) for p in read_list(args.list)]

    def run(job):
        src, dst = job
        V = load_spectrogram(src, fft_size, hop, floor)
        if V.shape[0] != model.dims[0]:
            raise ValueError(f"{src}: dimension mismatch, {V.shape[0]} rows != {model.dims[0]}")
        feats, q = extract_features(V, model, cfg, pre, return_ivector=True)
        _write_outputs(dst, feats, q, args.format)
        return dst, feats.shape

    for dst, shape in _map(run, jobs, args.jobs):
        print(f"{dst}: {shape[0]}x{shape[1]}")
    return 0


def cmd_synth(args):
    corpus = synth.generate(args.d, args.k, args.s, args.utterances, args.frames, args.seed,
                            t_scale=args.t_scale, noise=args.noise)
    paths = synth.write_corpus(corpus, args.out_dir)
    print(f"wrote {len(paths)} utterances to {args.out_dir}")
    return 0


# -- argument parsing ------------------------------------------------------

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float value: {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive_float(text):
    value = _nonneg_float(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="tvnmf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ubm", help="learn the UBM dictionary")
    p.add_argument("--list", required=True, help="utterance list file")
    p.add_argument("--k", type=_positive_int, default=60)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.1)
    p.add_argument("--iters", type=_positive_int, default=200)
    p.add_argument("--rel-tol", type=_nonneg_float, default=1e-5)
    p.add_argument("--epsilon", type=_positive_float, default=DEFAULT_EPSILON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fft-size", type=_positive_int, default=DEFAULT_FFT_SIZE)
    p.add_argument("--hop", type=_positive_int, default=DEFAULT_HOP)
    p.add_argument("--floor", type=_positive_float, default=DEFAULT_FLOOR)
    p.add_argument("--cache", action="store_true",
                   help="keep spectrograms in memory instead of re-reading each pass")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_train_ubm)

    p = sub.add_parser("train-tvm", help="estimate the total variability subspace")
    p.add_argument("--list", required=True)
    p.add_argument("--ubm", required=True, help="bundle written by train-ubm")
    p.add_argument("--s", type=_positive_int, default=400)
    p.add_argument("--em-iters", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--diagonal", action="store_true", help="diagonal covariance blocks")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tvm)

    p = sub.add_parser("extract", help="write log-activation features and i-vectors")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="inp", help="WAV or MAT1 spectrogram")
    src.add_argument("--list", help="utterance list for batch extraction")
    dst = p.add_mutually_exclusive_group(required=True)
    dst.add_argument("--out", help="feature file (with --in)")
    dst.add_argument("--out-dir", help="output directory (with --list)")
    p.add_argument("--format", choices=["mat1", "ascii"], default="mat1")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--d", type=_positive_int, default=4)
    p.add_argument("--k", type=_positive_int, default=3)
    p.add_argument("--s", type=_positive_int, default=2)
    p.add_argument("--utterances", type=_positive_int, default=200)
    p.add_argument("--frames", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-scale", type=_positive_float, default=0.5)
    p.add_argument("--noise", type=_nonneg_float, default=0.1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "extract" and (args.inp is None) != (args.out is None):
        parser.error("use --in with --out, or --list with --out-dir")
    _setup_logging()
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError, linalg.LinAlgError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
