"""Command line entry point: generate, train, eval, slam, pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import Pose2
from .evaluate import compare_spaces, default_sweep, knn_pr_curve, write_ppm
from .exceptions import ConfigError, DataError, GeoloopError, NumericalError
from .ingest import build_keyframes, keyframe_arrays
from .network import (EmbeddingModel, config_dict, load_checkpoint, save_checkpoint, train,
                      write_loss_trace)
from .posegraph import run_slam_experiment
from .supervision import PairSet, attach_distance_weights, label_pairs, self_similarity
from .synthworld import WorldConfig, generate_session, read_truth

log = logging.getLogger("geoloop")

COMMANDS = ("generate", "train", "eval", "slam", "pipeline")


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.paths.out_dir)


def _session_dir(cfg: RunConfig, session: int) -> Path:
    return _out(cfg) / "sessions" / f"session_{session:02d}"


def _train_dirs(cfg: RunConfig) -> list:
    if cfg.paths.train_sessions:
        return [Path(p) for p in cfg.paths.train_sessions]
    return [_session_dir(cfg, s) for s in cfg.experiment.train_sessions]


def _test_dir(cfg: RunConfig) -> Path:
    if cfg.paths.test_session:
        return Path(cfg.paths.test_session)
    return _session_dir(cfg, cfg.experiment.test_session)


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else _out(cfg) / "checkpoint.json"


def _keyframes(cfg: RunConfig, session_dir: Path):
    ex = cfg.experiment
    return build_keyframes(session_dir / "descriptors.jsonl", session_dir / "gps.jsonl",
                           ex.sync_tolerance, ex.keyframe_trans, ex.keyframe_rot)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_generate(cfg: RunConfig) -> dict:
    """Write every configured synthetic session under ``out_dir/sessions``."""
    written = {}
    base = cfg.to_dict()["world"]
    for s in [*cfg.experiment.train_sessions, cfg.experiment.test_session]:
        session = generate_session(WorldConfig(**{**base, "session": s}))
        session.write(_session_dir(cfg, s))
        written[s] = len(session)
        log.info("session %d: %d samples", s, len(session))
    return written


def build_training_set(cfg: RunConfig):
    """Stack keyframes of all training sessions and their per-session pairs."""
    Xs, sets, offset = [], [], 0
    for d in _train_dirs(cfg):
        frames = _keyframes(cfg, d)
        X, Z = keyframe_arrays(frames)
        pairs = label_pairs(self_similarity(Z, cfg.kernel), cfg.labels, cfg.experiment.temporal_guard)
        sets.append(attach_distance_weights(pairs, X).shifted(offset))
        Xs.append(X)
        offset += len(X)
    pairs = PairSet.concatenate(sets)
    if pairs.n_positives == 0 or pairs.n_negatives == 0:
        raise DataError(
            f"empty pair set ({pairs.summary()}); loosen tau_p={cfg.labels.tau_p} "
            f"or tau_n={cfg.labels.tau_n}, or lower temporal_guard"
        )
    return np.vstack(Xs), pairs


def cmd_train(cfg: RunConfig) -> EmbeddingModel:
    X, pairs = build_training_set(cfg)
    log.info("training on %d keyframes, %s", len(X), pairs.summary())
    dims = [X.shape[1], *cfg.model.hidden, cfg.model.embedding_dim]
    model = EmbeddingModel.initialize(dims, cfg.model.margin, cfg.model.activation, cfg.seed)
    tc = cfg.train_config()
    model, trace = train(model, pairs, X, tc)
    save_checkpoint(model, _checkpoint_path(cfg), {"train": config_dict(tc),
                                                   "kernel": cfg.to_dict()["kernel"],
                                                   "labels": cfg.to_dict()["labels"]})
    write_loss_trace(trace, _out(cfg) / "loss_trace.csv")
    log.info("loss %.4f -> %.4f", trace[0], trace[-1])
    return model


def _load_model(cfg: RunConfig, checkpoint=None) -> EmbeddingModel:
    return load_checkpoint(checkpoint or _checkpoint_path(cfg))


def _distance_matrix(S: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", S, S)
    return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * S @ S.T, 0.0))


def cmd_eval(cfg: RunConfig, checkpoint=None) -> dict:
    model = _load_model(cfg, checkpoint)
    frames = _keyframes(cfg, _test_dir(cfg))
    X, Z = keyframe_arrays(frames)
    if X.shape[1] != model.input_dim:
        raise DataError(f"checkpoint expects {model.input_dim}-d descriptors, data has {X.shape[1]}")
    ex = cfg.experiment
    report = compare_spaces(Z, X, model, cfg.rule, None, ex.temporal_guard, ex.bins,
                            radius=cfg.accept_radius)
    out = _out(cfg) / "eval"
    report.write(out)
    E = model.forward(X)
    write_ppm(_distance_matrix(X), out / "distance_raw.ppm")
    write_ppm(_distance_matrix(E), out / "distance_learned.ppm")
    summary = report.summary()
    if ex.knn_max_k:
        curve = knn_pr_curve(Z, E, cfg.rule, ex.temporal_guard, ex.knn_max_k)
        curve.write_csv(out / "pr_curve_knn.csv")
        summary["auc_knn_learned"] = curve.auc
        _write_json(out / "summary.json", summary)
    log.info("AUC raw %.3f learned %.3f, overlap raw %.3f learned %.3f",
             summary["auc_raw"], summary["auc_learned"],
             summary["overlap_raw"], summary["overlap_learned"])
    return summary


def load_truth_for(frames, session_dir: Path) -> list:
    truth_path = session_dir / "truth.jsonl"
    if not truth_path.exists():
        raise DataError(f"SLAM evaluation needs ground truth; {truth_path} not found")
    ts, poses = read_truth(truth_path)
    out = []
    for f in frames:
        k = int(np.argmin(np.abs(ts - f.timestamp)))
        if abs(ts[k] - f.timestamp) > 1e-6:
            raise DataError(f"no truth pose at keyframe time {f.timestamp}")
        out.append(poses[k])
    return out


def cmd_slam(cfg: RunConfig, checkpoint=None) -> dict:
    model = _load_model(cfg, checkpoint)
    session_dir = _test_dir(cfg)
    frames = _keyframes(cfg, session_dir)
    truth = load_truth_for(frames, session_dir)
    if frames[0].descriptor.vector.shape[0] != model.input_dim:
        raise DataError("checkpoint and session descriptor dimensions differ")
    ex = cfg.experiment
    report = run_slam_experiment(frames, truth, model, cfg.accept_radius, cfg.noise,
                                 ex.temporal_guard, ex.reoptimize_every, cfg.rule.dist_thresh,
                                 random_state=cfg.seed)
    report.write(_out(cfg) / "slam")
    summary = report.summary()
    log.info("ATE dead-reckoned %.3f optimized %.3f, %d closures (precision %.3f)",
             summary["ate_dead_reckoned"], summary["ate_optimized"],
             summary["closures"], summary["closure_precision"])
    return summary


def cmd_pipeline(cfg: RunConfig) -> dict:
    cmd_generate(cfg)
    cmd_train(cfg)
    return {"eval": cmd_eval(cfg), "slam": cmd_slam(cfg)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geoloop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, help="JSON run configuration")
        c.add_argument("--seed", type=int, default=None, help="override the run seed")
        c.add_argument("--out-dir", default=None, help="override paths.out_dir")
        c.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name in ("eval", "slam"):
            c.add_argument("--checkpoint", default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = RunConfig.load(args.config).with_overrides(args.seed, args.out_dir)
        _out(cfg).mkdir(parents=True, exist_ok=True)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        elif args.command == "slam":
            cmd_slam(cfg, args.checkpoint)
        else:
            cmd_pipeline(cfg)
    except GeoloopError as exc:
        print(f"geoloop: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"geoloop: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
