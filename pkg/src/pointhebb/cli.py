"""Experiment orchestration CLI.

Every subcommand reads a plain key-value config file (``key = value``, with
dotted keys for stage settings; flags override file values), derives all
randomness from one root seed via named substreams, and writes versioned
artifacts plus a manifest into the output directory.

Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import artifacts, baselines, costmodel
from . import dataset as ds
from . import encoder as enc
from . import hebbian as hb
from . import predictor as pr
from . import setdecoder as sd
from .seeding import substream, substream_seed


class ConfigError(ValueError):
    """Bad config file, key, or value."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    k: int = 5
    data_source: str = "synth"  # "synth" or "frames"
    frames_path: str = ""
    synth: ds.SynthConfig = field(default_factory=ds.SynthConfig)
    encoder: hb.HebbConfig = field(default_factory=hb.HebbConfig)
    decoder: sd.DecoderTrainConfig = field(default_factory=sd.DecoderTrainConfig)
    lstm: pr.LstmTrainConfig = field(default_factory=pr.LstmTrainConfig)
    selfsup: baselines.SelfSupConfig = field(default_factory=baselines.SelfSupConfig)

    def __post_init__(self):
        self.encoder.k = self.k

    # -- key-value plumbing ------------------------------------------------

    _GROUPS = ("synth", "encoder", "decoder", "lstm", "selfsup")

    def set_key(self, key: str, raw: str) -> None:
        target, name = self, key
        if "." in key:
            group, name = key.split(".", 1)
            if group == "data":
                name = {"source": "data_source", "path": "frames_path"}.get(name)
                if name is None:
                    raise ConfigError(f"unknown config key {key!r}")
            elif group in self._GROUPS:
                target = getattr(self, group)
            else:
                raise ConfigError(f"unknown config group {key!r}")
        try:
            spec = {f.name: f for f in dataclasses.fields(target)}[name]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None
        kind = spec.type if isinstance(spec.type, type) else type(getattr(target, name))
        try:
            value = {int: int, float: float, str: str}[kind](raw)
        except (KeyError, ValueError):
            raise ConfigError(f"bad value {raw!r} for {key!r} ({kind.__name__})") from None
        setattr(target, name, value)
        if key in ("k", "encoder.k"):
            self.k = self.encoder.k = int(raw)

    def items(self):
        yield "seed", self.seed
        yield "k", self.k
        yield "data.source", self.data_source
        yield "data.path", self.frames_path
        for group in self._GROUPS:
            obj = getattr(self, group)
            for f in dataclasses.fields(obj):
                yield f"{group}.{f.name}", getattr(obj, f.name)

    def canonical_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def parse_config(path: str | None, overrides: list[str]) -> ExperimentConfig:
    config = ExperimentConfig()
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            config.set_key(key.strip(), raw.strip())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        config.set_key(key.strip(), raw.strip())
    return config


# --------------------------------------------------------------------------
# shared stage plumbing
# --------------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _write_manifest(out_dir: Path, command: str, config: ExperimentConfig) -> None:
    manifest = {
        "command": command,
        "config_sha256": config.sha256(),
        "config": config.canonical_text(),
        "seed": config.seed,
        "package_version": __version__,
        "git_describe": _git_describe(),
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _load_frames(config: ExperimentConfig) -> list[ds.PointFrame]:
    if config.data_source == "frames":
        if not config.frames_path:
            raise ConfigError("data.source = frames requires data.path")
        return ds.load_frames(config.frames_path)
    if config.data_source == "synth":
        data_seed = substream_seed(config.seed, "data")
        return ds.synth_generate(config.synth, seed=data_seed)
    raise ConfigError(f"data.source must be 'synth' or 'frames', got {config.data_source!r}")


def _load_split(config: ExperimentConfig) -> ds.DatasetSplit:
    frames = _load_frames(config)
    chunks = ds.make_chunks(frames)
    return ds.split_chunks(chunks, seed=substream_seed(config.seed, "split") % 2**32)


def _eval_noise(config: ExperimentConfig) -> sd.NoiseSpec:
    return sd.NoiseSpec(seed=substream_seed(config.seed, "eval-noise"))


def _variant_of(path: Path, prefix: str) -> str:
    stem = path.stem
    if not stem.startswith(prefix + "_"):
        raise ConfigError(f"{path}: expected a file named {prefix}_<variant>.npz")
    return stem[len(prefix) + 1 :]


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise artifacts.CheckpointError(
            f"missing {path.name}; run '{stage}' first (looked in {path.parent})"
        )
    return path


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _cmd_gen_data(args, config: ExperimentConfig, out: Path) -> None:
    frames = _load_frames(config)
    ds.save_frames(frames, out / "frames.jsonl")
    print(f"wrote {len(frames)} frames to {out / 'frames.jsonl'}")


def _cmd_train_encoder(args, config: ExperimentConfig, out: Path) -> None:
    split = _load_split(config)
    rng = substream(config.seed, "encoder-train")
    params, history = hb.train_encoder(ds.frames_of(split.train), config.encoder, rng)
    variant = f"hebbian_k{config.k}"
    enc.save_encoder(params, out / f"encoder_{variant}.npz")
    artifacts.write_csv(
        out / f"encoder_history_{variant}.csv",
        ["epoch", "objective_layer1", "objective_layer2", "objective_layer3"],
        history.rows(),
    )
    print(
        f"encoder {variant}: objective {history.initial[-1]:.4f} -> "
        f"{min(history.last_layer):.4f} (epoch {history.selected_epoch})"
    )


def _cmd_train_decoder(args, config: ExperimentConfig, out: Path) -> None:
    enc_path = _require(
        Path(args.encoder) if args.encoder else out / f"encoder_hebbian_k{config.k}.npz",
        "train-encoder",
    )
    variant = _variant_of(enc_path, "encoder")
    encoder_params = enc.load_encoder(enc_path)
    split = _load_split(config)
    rng = substream(config.seed, "decoder-train")
    decoder_params, history = sd.train_decoder(
        encoder_params,
        ds.frames_of(split.train),
        ds.frames_of(split.validation),
        config.decoder,
        rng,
    )
    sd.save_decoder(decoder_params, out / f"decoder_{variant}.npz")
    artifacts.write_csv(
        out / f"decoder_history_{variant}.csv",
        ["epoch", "train_loss", "val_loss"],
        history.rows,
    )
    print(
        f"decoder {variant}: best val {min(history.validation):.6f} "
        f"(epoch {history.best_epoch})"
    )


def _cmd_train_lstm(args, config: ExperimentConfig, out: Path) -> None:
    enc_path = _require(
        Path(args.encoder) if args.encoder else out / f"encoder_hebbian_k{config.k}.npz",
        "train-encoder",
    )
    variant = _variant_of(enc_path, "encoder")
    dec_path = _require(
        Path(args.decoder) if args.decoder else out / f"decoder_{variant}.npz",
        "train-decoder",
    )
    encoder_params = enc.load_encoder(enc_path)
    decoder_params = sd.load_decoder(dec_path)
    split = _load_split(config)
    rng = substream(config.seed, "lstm-train")
    lstm_params, history = pr.train_lstm(
        encoder_params, decoder_params, split.train, split.validation, config.lstm, rng
    )
    pr.save_lstm(lstm_params, out / f"lstm_{variant}.npz")
    artifacts.write_csv(
        out / f"lstm_history_{variant}.csv",
        ["epoch", "train_loss", "val_loss"],
        history.rows,
    )
    print(
        f"lstm {variant}: best val {min(history.validation):.6f} "
        f"(epoch {history.best_epoch})"
    )


def _cmd_train_baseline(args, config: ExperimentConfig, out: Path) -> None:
    split = _load_split(config)
    train = ds.frames_of(split.train)
    val = ds.frames_of(split.validation)
    if args.kind == "untrained":
        seed = substream_seed(config.seed, "untrained-baseline") % 2**32
        encoder_params, decoder_params, history = baselines.run_untrained_baseline(
            seed, train, val, config.decoder
        )
        variant = "untrained"
    else:
        rng = substream(config.seed, "selfsup-train")
        encoder_params, decoder_params, history = baselines.train_self_supervised(
            train, val, config.selfsup, rng
        )
        variant = "selfsup"
    enc.save_encoder(encoder_params, out / f"encoder_{variant}.npz")
    sd.save_decoder(decoder_params, out / f"decoder_{variant}.npz")
    artifacts.write_csv(
        out / f"decoder_history_{variant}.csv",
        ["epoch", "train_loss", "val_loss"],
        history.rows,
    )
    print(f"baseline {variant}: best val {min(history.validation):.6f}")


def _cmd_eval_recon(args, config: ExperimentConfig, out: Path) -> None:
    split = _load_split(config)
    train = ds.frames_of(split.train)
    val = ds.frames_of(split.validation)
    noise = _eval_noise(config)
    decoders = sorted(out.glob("decoder_*.npz"))
    if not decoders:
        raise artifacts.CheckpointError(
            f"no decoder_*.npz in {out}; run train-decoder or train-baseline first"
        )
    rows = []
    for dec_path in decoders:
        variant = _variant_of(dec_path, "decoder")
        enc_path = _require(out / f"encoder_{variant}.npz", "train-encoder")
        encoder_params = enc.load_encoder(enc_path)
        decoder_params = sd.load_decoder(dec_path)
        objective = ""
        if encoder_params.k is not None:
            vals = [
                hb.objective(enc.forward_codes(f.points, encoder_params)[1][-1])
                for f in val
            ]
            objective = f"{np.mean(vals):.4f}"
        rows.append(
            (
                variant,
                objective,
                f"{sd.reconstruction_loss(encoder_params, decoder_params, train, noise):.6f}",
                f"{sd.reconstruction_loss(encoder_params, decoder_params, val, noise):.6f}",
            )
        )
    artifacts.write_csv(
        out / "recon_eval.csv", ["model", "objective", "train_loss", "val_loss"], rows
    )
    width = max(len(r[0]) for r in rows) + 2
    print(f"{'model':<{width}} {'objective':>10} {'train':>10} {'val':>10}")
    for variant, objective, train_loss, val_loss in rows:
        print(f"{variant:<{width}} {objective:>10} {train_loss:>10} {val_loss:>10}")


def _cmd_eval_predict(args, config: ExperimentConfig, out: Path) -> None:
    variant = args.variant or f"hebbian_k{config.k}"
    encoder_params = enc.load_encoder(_require(out / f"encoder_{variant}.npz", "train-encoder"))
    decoder_params = sd.load_decoder(_require(out / f"decoder_{variant}.npz", "train-decoder"))
    lstm_params = pr.load_lstm(_require(out / f"lstm_{variant}.npz", "train-lstm"))
    split = _load_split(config)
    noise = _eval_noise(config)
    observe = config.lstm.observe

    curves = []
    with open(out / f"predictions_{variant}.jsonl", "w", encoding="utf-8") as fh:
        for ci, chunk in enumerate(split.test):
            frames, result = pr.predict_sets(
                chunk, encoder_params, decoder_params, lstm_params,
                noise=noise, observe=observe,
            )
            curves.append(result.losses)
            for j, frame in enumerate(frames):
                fh.write(json.dumps({
                    "chunk": ci, "step": j + 1, "t": frame.t,
                    "points": frame.points.tolist(),
                }) + "\n")
    mean_curve = np.mean(curves, axis=0)
    artifacts.write_csv(
        out / f"pred_eval_{variant}.csv",
        ["step", "mean_loss"],
        [(j + 1, f"{v:.6f}") for j, v in enumerate(mean_curve)],
    )
    observed = float(mean_curve[:observe].mean())
    recursive = float(mean_curve[observe:].mean())
    print(
        f"prediction {variant}: mean {mean_curve.mean():.6f} "
        f"(observed {observed:.6f}, recursive {recursive:.6f})"
    )


def _cmd_limited_data(args, config: ExperimentConfig, out: Path) -> None:
    split = _load_split(config)
    fractions = [float(f) for f in args.fractions.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = baselines.limited_data_study(
        split, fractions, seeds,
        hebb_config=config.encoder,
        decoder_config=config.decoder,
        selfsup_config=config.selfsup,
        lstm_config=config.lstm if args.with_prediction else None,
        eval_noise_seed=substream_seed(config.seed, "eval-noise"),
    )
    artifacts.write_csv(
        out / "limited_data.csv",
        ["fraction", "method", "recon_loss", "pred_loss"],
        [
            (r.fraction, r.method, f"{r.recon_loss:.6f}",
             "" if r.pred_loss is None else f"{r.pred_loss:.6f}")
            for r in rows
        ],
    )
    print(f"limited-data study: {len(rows)} rows -> {out / 'limited_data.csv'}")


def _cmd_cost_report(args, config: ExperimentConfig, out: Path) -> None:
    n = args.points
    reports = [
        costmodel.report(costmodel.encoder_spec(), n),
        costmodel.report(costmodel.predictor_spec(), 1),
        costmodel.report(costmodel.decoder_spec(), n),
        costmodel.report(costmodel.model_spec(), n),
        costmodel.report(costmodel.convlstm_spec(), 1),
    ]
    (out / "cost_report.json").write_text(costmodel.reports_json(reports))
    print(costmodel.format_table(reports))
    model = next(r for r in reports if r.name == "set-model")
    conv = next(r for r in reports if r.name == "convlstm")
    ratios = costmodel.compare_report(model, conv)
    print(
        f"\nconvlstm / set-model at N={n}: "
        f"x{ratios.activations:.0f} activations, x{ratios.flops:.0f} flops"
    )


def _cmd_render(args, config: ExperimentConfig, out: Path) -> None:
    frames = ds.load_frames(args.frames)
    renders = out / "renders"
    renders.mkdir(exist_ok=True)
    for i, frame in enumerate(frames):
        ds.write_pgm(
            ds.rasterize(frame, resolution=args.resolution),
            renders / f"frame_{i:05d}.pgm",
        )
    print(f"rendered {len(frames)} frames into {renders}")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-encoder": _cmd_train_encoder,
    "train-decoder": _cmd_train_decoder,
    "train-lstm": _cmd_train_lstm,
    "train-baseline": _cmd_train_baseline,
    "eval-recon": _cmd_eval_recon,
    "eval-predict": _cmd_eval_predict,
    "limited-data": _cmd_limited_data,
    "cost-report": _cmd_cost_report,
    "render": _cmd_render,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointhebb", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--seed", type=int, help="override root seed")
        p.add_argument("--k", type=int, help="override winners per point")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override any config key",
        )

    for name in _COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name in ("train-decoder", "train-lstm"):
            p.add_argument("--encoder", help="encoder checkpoint path")
        if name == "train-lstm":
            p.add_argument("--decoder", help="decoder checkpoint path")
        if name == "train-baseline":
            p.add_argument(
                "--kind", choices=["untrained", "self_supervised"], required=True
            )
        if name == "eval-predict":
            p.add_argument("--variant", help="artifact variant tag (default hebbian_k<k>)")
        if name == "limited-data":
            p.add_argument("--fractions", default="0.5,0.25,0.1,0.05,0.02,0.01")
            p.add_argument("--seeds", default="0")
            p.add_argument("--with-prediction", action="store_true")
        if name == "cost-report":
            p.add_argument("--points", type=int, default=costmodel.REFERENCE_N)
        if name == "render":
            p.add_argument("--frames", required=True, help="frames JSONL to render")
            p.add_argument("--resolution", type=int, default=256)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits; keep it a return code
        return int(exc.code or 0)
    try:
        config = parse_config(args.config, args.set)
        if args.seed is not None:
            config.set_key("seed", str(args.seed))
        if args.k is not None:
            config.set_key("k", str(args.k))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, args.command, config)
        _COMMANDS[args.command](args, config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (artifacts.CheckpointError, ds.FrameError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
