"""``dexrefine`` command line.

Subcommands: ``refine``, ``retarget``, ``vq {train-ref,train-new,translate,refresh-stats}``,
``metrics``, ``noise-study``, ``normals`` and ``fixtures generate``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
Reports are JSON lines with sorted keys; reruns with the same config and seed
write byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io
from .config import ConfigError, RunConfig, load_config
from .fixtures import generate_fixtures
from .geometry import to_world_trajectory
from .handmodel import HandTrajectory, ModelError, load_chain
from .metrics import diversity, extract_features, fid, fol, fpl, mpjpe
from .pointcloud import estimate_normals
from .refiner import RefinementError, SingularSystemError, noise_study, refine_sequence
from .retarget import retarget_sequence, retarget_spec_from_dict
from .tokenizer.codebook import PoseChunkSpec, assemble_chunks, make_chunks, quantize_many, translate
from .tokenizer.training import TrainingDiverged, reconstruction_mse, train_new_morphology, train_reference

log = logging.getLogger("dexrefine")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for data errors here.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _require(cfg: RunConfig, *names):
    for name in names:
        if not getattr(cfg.inputs, name):
            raise ConfigError(f"inputs.{name}: required for this command")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path):
    try:
        return load_chain(path)
    except FileNotFoundError as exc:
        raise io.DataFileError(f"file not found: {path}") from exc


def _chunk_spec(cfg: RunConfig) -> PoseChunkSpec:
    s = cfg.vq.spec
    return PoseChunkSpec(s.window, s.stride, s.dof)


def _load_sequences(paths) -> list[np.ndarray]:
    return [io.read_joint_trajectory(p) for p in paths]


def _chunks(paths, spec: PoseChunkSpec) -> np.ndarray:
    return np.vstack([make_chunks(s, spec) for s in _load_sequences(paths)])


# ---------------------------------------------------------------- commands


def cmd_refine(cfg: RunConfig, dry_run: bool) -> int:
    _require(cfg, "hand_model", "trajectory", "cloud", "target_poses")
    chain = _load_model(cfg.inputs.hand_model)
    gen = HandTrajectory(io.read_joint_trajectory(cfg.inputs.trajectory), chain)
    cloud = io.read_cloud(cfg.inputs.cloud, cfg.normals.k_neighbors)
    poses = io.read_pose_trajectory(cfg.inputs.target_poses)
    if cfg.inputs.extrinsics:
        poses = to_world_trajectory(io.read_pose_trajectory(cfg.inputs.extrinsics)[0], poses)
    if len(poses) != len(gen):
        raise io.DataFileError(f"inputs.target_poses: {len(poses)} frames, trajectory has {len(gen)}")
    if dry_run:
        print(f"refine: {len(gen)} frames, {chain.dof} dof, {len(cloud)} cloud points; inputs valid")
        return EXIT_OK
    refined, trace = refine_sequence(gen, cloud, poses, chain, cfg.refinement_config())
    out = _out_dir(cfg)
    io.write_joint_trajectory(out / "refined.txt", refined)
    io.write_jsonl(out / "trace.jsonl", [rec for ft in trace.frames for rec in ft.records()])
    report = [
        {
            "frame": ft.frame,
            "initial_energy": ft.initial_energy,
            "final_energy": ft.final_energy,
            "iterations": len(ft.iterations),
            "max_abs_distance": float(np.max(np.abs(ft.distances))),
            "stop_reason": ft.stop_reason,
        }
        for ft in trace.frames
    ]
    io.write_jsonl(out / "report.jsonl", report)
    worst = max(r["max_abs_distance"] for r in report)
    print(f"refined {len(report)} frames; final max |d| = {worst * 1000:.4f} mm")
    return EXIT_OK


def cmd_retarget(cfg: RunConfig, dry_run: bool) -> int:
    _require(cfg, "hand_model", "keypoints", "retarget_spec")
    chain = _load_model(cfg.inputs.hand_model)
    frames, names = io.read_keypoints(cfg.inputs.keypoints)
    spec_path = Path(cfg.inputs.retarget_spec)
    if not spec_path.is_file():
        raise io.DataFileError(f"file not found: {spec_path}")
    try:
        doc = yaml.safe_load(spec_path.read_text())
    except yaml.YAMLError as exc:
        raise io.DataFileError(f"{spec_path}: invalid YAML ({exc})") from exc
    if cfg.retarget.lambda_smooth is not None:
        doc = dict(doc, lambda_smooth=cfg.retarget.lambda_smooth)
    try:
        spec = retarget_spec_from_dict(doc, chain.fingertip_links)
        spec.validate_for(chain)
    except ValueError as exc:
        raise ConfigError(f"inputs.retarget_spec: {exc}") from exc
    if max(k for _, k in spec.correspondences) >= len(names):
        raise io.DataFileError(f"inputs.keypoints: spec references keypoint index beyond the {len(names)} in the file")
    q_init = None
    if cfg.inputs.q_init:
        q_init = io.read_joint_trajectory(cfg.inputs.q_init)[0]
    if dry_run:
        print(f"retarget: {len(frames)} frames, {len(spec.correspondences)} correspondences; inputs valid")
        return EXIT_OK
    traj = retarget_sequence(frames, chain, spec, cfg.refinement_config(), q_init)
    out = _out_dir(cfg)
    io.write_joint_trajectory(out / "retargeted.txt", traj)
    print(f"retargeted {len(traj)} frames onto {chain.name} ({chain.dof} dof)")
    return EXIT_OK


def _history_records(history) -> list[dict]:
    from dataclasses import asdict

    return [asdict(e) for e in history.epochs]


def _refresh_stats(history) -> list[dict]:
    return [{"epoch": e.epoch, "n_cold": e.n_cold, "n_replaced": e.n_replaced} for e in history.epochs if e.n_cold is not None]


def cmd_vq(cfg: RunConfig, sub: str, dry_run: bool) -> int:
    tspec = cfg.tokenizer_spec()
    cspec = _chunk_spec(cfg)
    spec_doc = cfg.to_dict()["vq"]["spec"]
    src, tgt = cfg.vq.source, cfg.vq.target

    if sub == "train-ref":
        _require(cfg, "dataset")
        x = _chunks(cfg.inputs.dataset, cspec)
        if dry_run:
            print(f"vq train-ref: {len(x)} chunks of width {x.shape[1]}; inputs valid")
            return EXIT_OK
        enc, dec, codebook, history = train_reference(x, tspec, cfg.train_config())
        out = _out_dir(cfg)
        extra = {"refresh": _refresh_stats(history), "initial_mse": history.initial_mse, "final_mse": history.final_mse}
        io.write_archive(out / "codebook.json", spec_doc, codebook, {f"encoder/{src}": enc, f"decoder/{src}": dec}, extra)
        io.write_jsonl(out / "history.jsonl", _history_records(history))
        print(f"trained reference tokenizer: MSE {history.initial_mse:.6g} -> {history.final_mse:.6g}")
        return EXIT_OK

    if sub == "refresh-stats":
        _require(cfg, "codebook")
        doc, _, _ = io.read_archive(cfg.inputs.codebook)
        stats = doc.get("extra", {}).get("refresh", [])
        if dry_run:
            print(f"vq refresh-stats: archive with {len(stats)} refresh records; inputs valid")
            return EXIT_OK
        for s in stats:
            print(f"epoch {s['epoch']}: cold {s['n_cold']}, replaced {s['n_replaced']}")
        io.write_jsonl(_out_dir(cfg) / "refresh_stats.jsonl", stats)
        return EXIT_OK

    _require(cfg, "codebook", "dataset")
    doc, codebook, nets = io.read_archive(cfg.inputs.codebook)
    if sub == "train-new":
        _require(cfg, "dataset_ref")
        key = f"encoder/{src}"
        if key not in nets:
            raise io.DataFileError(f"inputs.codebook: archive has no '{key}' net")
        x_new = _chunks(cfg.inputs.dataset, cspec)
        x_ref = np.vstack([make_chunks(s, PoseChunkSpec(cspec.window, cspec.stride, s.shape[1])) for s in _load_sequences(cfg.inputs.dataset_ref)])
        if dry_run:
            print(f"vq train-new: {len(x_new)} paired chunks; inputs valid")
            return EXIT_OK
        enc, dec, history = train_new_morphology(x_new, x_ref, nets[key], codebook, tspec, cfg.train_config())
        nets = dict(nets, **{f"encoder/{tgt}": enc, f"decoder/{tgt}": dec})
        extra = dict(doc.get("extra", {}), distill_before=history.distill_before, distill_after=history.distill_after)
        out = _out_dir(cfg)
        io.write_archive(out / "codebook.json", doc["spec"], codebook, nets, extra)
        io.write_jsonl(out / "history.jsonl", _history_records(history))
        print(f"aligned '{tgt}': distillation {history.distill_before:.6g} -> {history.distill_after:.6g}")
        return EXIT_OK

    if sub == "translate":
        for key in (f"encoder/{src}", f"decoder/{tgt}"):
            if key not in nets:
                raise io.DataFileError(f"inputs.codebook: archive has no '{key}' net")
        enc, dec = nets[f"encoder/{src}"], nets[f"decoder/{tgt}"]
        seqs = _load_sequences(cfg.inputs.dataset)
        targets = _load_sequences(cfg.inputs.dataset_target) if cfg.inputs.dataset_target else None
        if targets is not None and len(targets) != len(seqs):
            raise ConfigError("inputs.dataset_target: must pair one-to-one with inputs.dataset")
        if dry_run:
            print(f"vq translate: {len(seqs)} sequences {src} -> {tgt}; inputs valid")
            return EXIT_OK
        out = _out_dir(cfg)
        src_spec = PoseChunkSpec(cspec.window, cspec.stride, enc.in_dim // cspec.window)
        tgt_spec = PoseChunkSpec(cspec.window, cspec.stride, dec.out_dim // cspec.window)
        report = []
        for i, s in enumerate(seqs):
            chunks = make_chunks(s, src_spec)
            decoded = translate(enc, dec, codebook, chunks)
            tokens = quantize_many(codebook, enc.forward(chunks))
            io.write_joint_trajectory(out / f"translated_{i:02d}.txt", assemble_chunks(decoded, tgt_spec, len(s)))
            rec = {"sequence": i, "tokens": tokens.tolist()}
            if targets is not None:
                x_t = make_chunks(targets[i], tgt_spec)
                rec["translation_mse"] = float(np.mean((decoded - x_t) ** 2))
                if f"encoder/{tgt}" in nets:
                    rec["reconstruction_mse"] = reconstruction_mse(nets[f"encoder/{tgt}"], dec, codebook, x_t)
            report.append(rec)
        io.write_jsonl(out / "report.jsonl", report)
        print(f"translated {len(seqs)} sequences {src} -> {tgt}")
        return EXIT_OK
    raise UsageError(f"unknown vq subcommand {sub}")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_metrics(cfg: RunConfig, dry_run: bool) -> int:
    """Write ``report.jsonl``: one ``sequence`` record per input and metric, then one ``aggregate`` per metric.

    Aggregate records carry ``parameters``; FID and diversity also carry the
    ``extractor`` fingerprint (archive checksum, encoder name, window, stride).
    """
    inp = cfg.inputs
    if len(inp.pred_keypoints) != len(inp.gt_keypoints):
        raise ConfigError("inputs.pred_keypoints: must pair one-to-one with inputs.gt_keypoints")
    if len(inp.pred_root_poses) != len(inp.gt_root_poses):
        raise ConfigError("inputs.pred_root_poses: must pair one-to-one with inputs.gt_root_poses")
    if inp.real_sequences or inp.gen_sequences:
        _require(cfg, "codebook", "real_sequences", "gen_sequences")
    pred_kp = [io.read_keypoints(p)[0] for p in inp.pred_keypoints]
    gt_kp = [io.read_keypoints(p)[0] for p in inp.gt_keypoints]
    pred_root = [io.read_pose_trajectory(p)[-1] for p in inp.pred_root_poses]
    gt_root = [io.read_pose_trajectory(p)[-1] for p in inp.gt_root_poses]
    if dry_run:
        print("metrics: inputs valid")
        return EXIT_OK

    per_seq, agg = [], []

    def add(metric, unit, values, params):
        for i, v in enumerate(values):
            per_seq.append({"record": "sequence", "metric": metric, "unit": unit, "sequence": i, "value": v})
        agg.append({"record": "aggregate", "metric": metric, "unit": unit, "n": len(values), "value": float(np.mean(values)), "parameters": params})

    if pred_kp:
        vals = [mpjpe(p, g) for p, g in zip(pred_kp, gt_kp)]
        add("mpjpe", "mm", vals, {"averaging": "per-sequence mean, then mean over sequences"})
    if pred_root:
        add("fpl", "mm", [fpl(p.translation, g.translation) for p, g in zip(pred_root, gt_root)], {"frame": "last"})
        add("fol", "deg", [fol(p.rotation, g.rotation) for p, g in zip(pred_root, gt_root)], {"frame": "last", "clamp": [-1, 1]})
    if inp.real_sequences:
        _, codebook, nets = io.read_archive(inp.codebook)
        key = f"encoder/{cfg.vq.source}"
        if key not in nets:
            raise io.DataFileError(f"inputs.codebook: archive has no '{key}' net")
        cspec = _chunk_spec(cfg)
        fingerprint = {"archive_sha256": _sha256(inp.codebook), "encoder": key, "window": cspec.window, "stride": cspec.stride}
        real = np.array([extract_features(s, nets[key], codebook, cspec) for s in _load_sequences(inp.real_sequences)])
        gen = np.array([extract_features(s, nets[key], codebook, cspec) for s in _load_sequences(inp.gen_sequences)])
        common = {"record": "aggregate", "unit": "", "n": len(gen), "extractor": fingerprint}
        agg.append(
            dict(common, metric="fid", value=fid(real, gen), parameters={"covariance": "unbiased", "sqrt": "symmetric eigendecomposition, eigenvalues clamped at 0"})
        )
        div, ref = diversity(gen), diversity(real)
        agg.append(
            dict(common, metric="diversity", value=div, parameters={"reference": "diversity of the real set"}, reference=ref, abs_diff_from_reference=abs(div - ref))
        )
    io.write_jsonl(_out_dir(cfg) / "report.jsonl", per_seq + agg)
    for r in agg:
        print(f"{r['metric']}: {r['value']:.6g} {r['unit']}".rstrip())
    return EXIT_OK


def cmd_noise_study(cfg: RunConfig, dry_run: bool) -> int:
    _require(cfg, "hand_model", "trajectory", "cloud", "target_poses")
    chain = _load_model(cfg.inputs.hand_model)
    q_gen = io.read_joint_trajectory(cfg.inputs.trajectory)[0]
    chain.check_q(q_gen)
    cloud = io.read_cloud(cfg.inputs.cloud, cfg.normals.k_neighbors)
    pose = io.read_pose_trajectory(cfg.inputs.target_poses)[0]
    ns = cfg.noise_study
    if dry_run:
        print(f"noise-study: {len(ns.sigma_levels)} sigma levels x {ns.seeds} seeds x 2 kernels; inputs valid")
        return EXIT_OK
    rows, summary = noise_study(
        cloud, ns.sigma_levels, ns.seeds, chain, cfg.refinement_config(), q_gen, pose, np.random.default_rng(cfg.seed), ns.baseline_delta
    )
    from dataclasses import asdict

    out = _out_dir(cfg)
    io.write_jsonl(out / "rows.jsonl", [asdict(r) for r in rows])
    io.write_jsonl(out / "summary.jsonl", summary)
    for s in summary:
        print(
            f"sigma {s['sigma']:g}: median deviation {s['median_deviation_asymmetric']:.4g} (asymmetric) "
            f"vs {s['median_deviation_smooth_abs']:.4g} (smooth |d|)"
        )
    return EXIT_OK


def cmd_normals(cfg: RunConfig, dry_run: bool) -> int:
    _require(cfg, "cloud")
    cloud = io.read_cloud(cfg.inputs.cloud, cfg.normals.k_neighbors)
    if dry_run:
        print(f"normals: {len(cloud)} points; inputs valid")
        return EXIT_OK
    normals, degenerate = estimate_normals(cloud.points, cfg.normals.k_neighbors, cfg.normals.orient_ref)
    out = _out_dir(cfg)
    io.write_cloud_xyz(out / "normals.xyz", cloud.points, normals)
    io.write_jsonl(out / "report.jsonl", [{"points": len(cloud), "degenerate": int(np.count_nonzero(degenerate))}])
    print(f"estimated {len(cloud)} normals ({int(np.count_nonzero(degenerate))} degenerate neighborhoods)")
    return EXIT_OK


def cmd_fixtures(seed: int, out: str) -> int:
    manifest = generate_fixtures(seed, out)
    print(f"wrote {len(manifest['files'])} fixture files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out-dir", help="output directory (overrides the config)")
    common.add_argument("--dry-run", action="store_true", help="validate inputs and exit")
    common.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dexrefine", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("refine", "contact-aware refinement of a generated trajectory"),
        ("retarget", "fit device joints to source keypoints"),
        ("metrics", "evaluation metrics report"),
        ("noise-study", "kernel robustness under cloud noise"),
        ("normals", "estimate point-cloud normals"),
    ):
        sub.add_parser(name, parents=[common], help=help_)
    vq = sub.add_parser("vq", help="motion tokenizer")
    vq_sub = vq.add_subparsers(dest="vq_command", required=True, parser_class=_Parser)
    for name in ("train-ref", "train-new", "translate", "refresh-stats"):
        vq_sub.add_parser(name, parents=[common])
    fx = sub.add_parser("fixtures", help="synthetic fixtures")
    fx_sub = fx.add_subparsers(dest="fixtures_command", required=True, parser_class=_Parser)
    gen = fx_sub.add_parser("generate")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "fixtures":
            return cmd_fixtures(args.seed, args.out)
        cfg = load_config(args.config, {"seed": args.seed, "out_dir": args.out_dir, "threads": args.threads})
        with np.errstate(over="ignore", invalid="ignore"):
            if args.command == "vq":
                return cmd_vq(cfg, args.vq_command, args.dry_run)
            handler = {
                "refine": cmd_refine,
                "retarget": cmd_retarget,
                "metrics": cmd_metrics,
                "noise-study": cmd_noise_study,
                "normals": cmd_normals,
            }[args.command]
            return handler(cfg, args.dry_run)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, RefinementError, TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataFileError, ModelError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
