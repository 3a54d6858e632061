"""Command-line front end: ``mtda {train,ablate,eval,export} --config run.cfg``.

The run file is flat ``[section]`` / ``key = value`` text. ``#`` starts a
comment. Every problem is reported with its line number and exits with 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from . import data as mdata
from .data import FormatError
from .losses import HyperParams
from .nets import Architecture, ConfigError, check_configs
from .trainer import CheckpointError, DivergenceError, TrainConfig, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CORRUPT = 0, 2, 3, 4


class ConfigFileError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _ints(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",")) if s else ()


def _strs(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


# section -> key -> (parser, required)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], object], bool]]] = {
    "data": {
        "kind": (str, True),
        "domains": (_int, False),
        "classes": (_int, False),
        "n_per_domain": (_int, False),
        "rotation_per_domain": (_float, False),
        "noise_sigma": (_float, False),
        "seed": (_int, False),
        "idx_images": (_strs, False),
        "idx_labels": (_strs, False),
        "downsample": (_int, False),
    },
    "nets": {
        "d_s": (_int, False),
        "d_p": (_int, False),
        "encoder_hidden": (_ints, False),
        "decoder_hidden": (_ints, False),
        "domain_hidden": (_ints, False),
        "classifier_hidden": (_ints, False),
    },
    "hyper": {
        "lambda_r": (_float, False),
        "lambda_c": (_float, False),
        "lambda_d": (_float, False),
        "eta": (_float, False),
    },
    "optimizer": {
        "kind": (str, False),
        "beta1": (_float, False),
        "beta2": (_float, False),
        "eps": (_float, False),
    },
    "train": {
        "mode": (str, True),
        "steps": (_int, True),
        "seed": (_int, True),
        "batch_size_per_domain": (_int, False),
        "eval_every": (_int, False),
        "checkpoint_every": (_int, False),
        "adversarial_form": (str, False),
    },
    "output": {
        "dir": (str, True),
    },
}


@dataclass(frozen=True)
class RunFile:
    values: dict[tuple[str, str], object]
    lines: dict[tuple[str, str], int]

    def get(self, section: str, key: str, default=None):
        return self.values.get((section, key), default)

    def line_of(self, section: str, key: str) -> Optional[int]:
        return self.lines.get((section, key))


def parse_config(text: str) -> RunFile:
    """Parse run-file text. Raises ConfigFileError naming the line."""
    values: dict[tuple[str, str], object] = {}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigFileError(f"malformed section header {raw.strip()!r}", no)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigFileError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {raw.strip()!r}", no)
        if section is None:
            raise ConfigFileError("key outside of any [section]", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigFileError(f"unknown key {key!r} in [{section}]", no)
        if (section, key) in values:
            raise ConfigFileError(f"duplicate key {key!r} in [{section}] (first on line "
                                  f"{lines[(section, key)]})", no)
        conv, _ = SCHEMA[section][key]
        try:
            values[(section, key)] = conv(value)
        except ValueError:
            raise ConfigFileError(f"bad value {value!r} for {key!r}", no) from None
        lines[(section, key)] = no
    for sec, keys in SCHEMA.items():
        for key, (_, required) in keys.items():
            if required and (sec, key) not in values:
                raise ConfigFileError(f"missing required key {key!r} in [{sec}]")
    return RunFile(values, lines)


def read_config(path: str) -> RunFile:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def _checked(cfg: RunFile, sections: Sequence[str], build):
    """Run ``build``; re-raise value errors against the line of the key they mention."""
    try:
        return build()
    except (ConfigError, ValueError, TypeError) as exc:
        msg = str(exc)
        line = None
        for (sec, key), no in sorted(cfg.lines.items(), key=lambda kv: kv[1]):
            value = cfg.values[(sec, key)]
            if sec in sections and (key in msg or (isinstance(value, str) and repr(value) in msg)):
                line = no
                break
        if line is None:
            known = [no for (sec, _), no in cfg.lines.items() if sec in sections]
            line = min(known) if known else None
        raise ConfigFileError(msg, line) from None


def build_train_config(cfg: RunFile, seed: Optional[int] = None) -> TrainConfig:
    hp_kw = {k: cfg.get("hyper", k) for k in SCHEMA["hyper"] if cfg.get("hyper", k) is not None}
    arch_kw = {k: cfg.get("nets", k) for k in SCHEMA["nets"] if cfg.get("nets", k) is not None}
    kw = {
        "hp": _checked(cfg, ["hyper"], lambda: HyperParams(**hp_kw)),
        "arch": _checked(cfg, ["nets"], lambda: Architecture(**arch_kw)),
        "mode": cfg.get("train", "mode"),
        "steps": cfg.get("train", "steps"),
        "seed": cfg.get("train", "seed") if seed is None else seed,
    }
    for key in ("batch_size_per_domain", "eval_every", "checkpoint_every", "adversarial_form"):
        if cfg.get("train", key) is not None:
            kw[key] = cfg.get("train", key)
    if cfg.get("optimizer", "kind") is not None:
        kw["optimizer"] = cfg.get("optimizer", "kind")
    for key in ("beta1", "beta2", "eps"):
        if cfg.get("optimizer", key) is not None:
            kw[key] = cfg.get("optimizer", key)
    return _checked(cfg, ["train", "optimizer"], lambda: TrainConfig(**kw))


def check_nets(cfg: RunFile, config: TrainConfig, datasets) -> None:
    """Validate the five network shapes against the data before any training."""
    src = next(d for d in datasets if d.is_source)
    width = max(2, len(datasets))
    _checked(cfg, ["nets"], lambda: check_configs(config.arch.net_configs(src.d_x, src.num_classes, width)))


def build_datasets(cfg: RunFile) -> list[mdata.DomainDataset]:
    kind = cfg.get("data", "kind")
    if kind == "synthetic":
        kw = {}
        for src, dst in (("domains", "M"), ("classes", "K"), ("n_per_domain", "n_per_domain"),
                         ("rotation_per_domain", "rotation_per_domain"),
                         ("noise_sigma", "noise_sigma"), ("seed", "seed")):
            if cfg.get("data", src) is not None:
                kw[dst] = cfg.get("data", src)
        spec = _checked(cfg, ["data"], lambda: mdata.SyntheticSpec(**kw))
        return mdata.gen_synthetic_domains(spec)
    if kind == "idx":
        images, labels = cfg.get("data", "idx_images", ()), cfg.get("data", "idx_labels", ())
        if len(images) < 2 or len(images) != len(labels):
            raise ConfigFileError("idx data needs matching idx_images/idx_labels lists of at "
                                  "least two domains (source first)", cfg.line_of("data", "idx_images"))
        num_classes = cfg.get("data", "classes", 10)
        out = []
        for i, (im, lb) in enumerate(zip(images, labels)):
            try:
                out.append(mdata.load_idx(im, lb, domain_id=i, is_source=(i == 0),
                                          num_classes=num_classes,
                                          downsample=cfg.get("data", "downsample")))
            except OSError as exc:
                raise ConfigFileError(f"cannot read IDX pair {im}, {lb}: {exc}",
                                      cfg.line_of("data", "idx_images")) from None
        return out
    raise ConfigFileError(f"unknown data kind {kind!r}; expected synthetic or idx",
                          cfg.line_of("data", "kind"))


def _out_dir(cfg: RunFile, override: Optional[str]) -> str:
    path = override or cfg.get("output", "dir")
    os.makedirs(path, exist_ok=True)
    return path


def _append_lines(path: str, lines: Sequence[str]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def summary_text(report) -> str:
    lines = [f"mode: {report.mode}", f"seed: {report.seed}", f"config: {report.config_digest}"]
    for d, a in sorted(report.accuracies.items()):
        tag = " (source)" if d == report.source_domain else ""
        lines.append(f"domain {d}{tag}: {a:.4f}")
    lines.append(f"mean target accuracy: {report.mean_target_accuracy:.4f}")
    if report.probe:
        lines.append(f"domain probe shared/private: {report.probe['shared']:.4f} / "
                     f"{report.probe['private']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    from .evalkit.probe import probe_disentanglement
    from .trainer import mode_expand, train_loop

    cfg = read_config(args.config)
    config = build_train_config(cfg, args.seed)
    datasets = build_datasets(cfg)
    check_nets(cfg, config, datasets)
    out = _out_dir(cfg, args.out)
    summaries = []
    for run_config in mode_expand(config, datasets):
        suffix = "" if run_config.target is None else f"_target{run_config.target}"
        ckdir = os.path.join(out, f"checkpoints{suffix}") if run_config.checkpoint_every else None
        if ckdir:
            os.makedirs(ckdir, exist_ok=True)
        state, report = train_loop(datasets, run_config, checkpoint_dir=ckdir)
        if run_config.mode != "source_only":
            run_sets = [d for d in datasets if run_config.target is None or d.is_source
                        or d.domain_id == run_config.target]
            shared, private = probe_disentanglement(state.params, run_sets, run_config.seed)
            report.probe = {"shared": shared, "private": private}
        save_checkpoint(state, os.path.join(out, f"checkpoint{suffix}.json"))
        _append_lines(os.path.join(out, "metrics.jsonl"), report.log_lines())
        summaries.append(summary_text(report))
    _write(os.path.join(out, "summary.txt"), "\n".join(summaries))
    sys.stdout.write("\n".join(summaries))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evalkit.ablation import ablation_suite, format_table

    cfg = read_config(args.config)
    config = build_train_config(cfg, args.seed)
    datasets = build_datasets(cfg)
    check_nets(cfg, config, datasets)
    out = _out_dir(cfg, args.out)
    reports = ablation_suite(datasets, config)
    lines = []
    for mode, r in reports.items():
        lines.append(json.dumps({"ablation": r.to_dict()}, sort_keys=True))
    _append_lines(os.path.join(out, "metrics.jsonl"), lines)
    table = format_table(reports)
    _write(os.path.join(out, "ablation.txt"), table)
    sys.stdout.write(table)
    return EXIT_OK


def _restore(args):
    if not args.checkpoint:
        raise ConfigFileError("--checkpoint is required for this command")
    return load_checkpoint(args.checkpoint)


def cmd_eval(args) -> int:
    from .evalkit.metrics import evaluate_domains
    from .evalkit.probe import probe_disentanglement

    cfg = read_config(args.config)
    config = build_train_config(cfg, args.seed)
    datasets = build_datasets(cfg)
    out = _out_dir(cfg, args.out)
    state = _restore(args)
    _check_widths(state, datasets)
    acc = evaluate_domains(state.params, datasets)
    shared, private = probe_disentanglement(state.params, datasets, config.seed)
    doc = {"step": state.step, "accuracy": {str(k): v for k, v in sorted(acc.items())},
           "probe": {"shared": shared, "private": private}}
    text = json.dumps(doc, sort_keys=True) + "\n"
    _write(os.path.join(out, "eval.json"), text)
    sys.stdout.write(text)
    return EXIT_OK


def _check_widths(state, datasets) -> None:
    d_x = datasets[0].d_x
    expected = state.params.theta_s.config.layer_widths[0]
    if expected != d_x:
        raise CheckpointError(f"checkpoint expects inputs of width {expected}, data has {d_x}")


def cmd_export(args) -> int:
    from .evalkit.export import export_features

    cfg = read_config(args.config)
    datasets = build_datasets(cfg)
    out = _out_dir(cfg, args.out)
    state = _restore(args)
    _check_widths(state, datasets)
    path = os.path.join(out, "features.csv")
    export_features(state.params, datasets, path)
    sys.stdout.write(path + "\n")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "eval": cmd_eval, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="overrides [train] seed")
        p.add_argument("--out", default=None, help="overrides [output] dir")
        if name in ("eval", "export"):
            p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, FormatError) as exc:
        print(f"corrupt input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    raise SystemExit(main())
