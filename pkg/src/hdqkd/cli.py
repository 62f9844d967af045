"""Command-line front end: ``hdqkd crosstalk|bb84|security|otp|compare-detectors``.

Settings resolve in this order (later wins): built-in defaults, ``--config``
JSON file, ``HDQKD_*`` environment variables, command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, channel, detection, optics, protocol, security

log = logging.getLogger("hdqkd")

EXIT_IO = 2
EXIT_EMPTY_KEY = 3


@dataclass(frozen=True)
class RunConfig:
    subspace_l: int | None = None
    detector: str = "deterministic"
    preset: str = "ideal"
    eve: str = "none"
    eve_bias: float = 0.5
    n_symbols: int = 100
    trials_per_mode: int = 100_000
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    variant: str = "printed"
    mu: float | None = None

    def __post_init__(self):
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if self.trials_per_mode < 1:
            raise ValueError("trials_per_mode must be >= 1")
        if self.detector not in protocol.DETECTORS:
            raise ValueError(f"detector must be one of {protocol.DETECTORS}")
        if self.subspace_l is not None and self.subspace_l < 1:
            raise ValueError("subspace_l must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        protocol.EveStrategy(self.eve, self.eve_bias)

    def load_preset(self) -> channel.Preset:
        p = channel.load_preset(self.preset)
        if self.mu is not None:
            p = replace(p, source=channel.SourceModel("poisson", self.mu))
        return p

    def l(self, preset: channel.Preset) -> int:
        return self.subspace_l if self.subspace_l is not None else preset.subspace_l


# flag -> (config field, type)
OPTIONS = {
    "subspace_l": ("--subspace-l", int),
    "detector": ("--detector", str),
    "preset": ("--preset", str),
    "eve": ("--eve", str),
    "eve_bias": ("--eve-bias", float),
    "n_symbols": ("--n", int),
    "trials_per_mode": ("--trials", int),
    "seed": ("--seed", int),
    "threads": ("--threads", int),
    "output_dir": ("--out", str),
    "variant": ("--variant", str),
    "mu": ("--mu", float),
}
ENV_NAMES = {
    "subspace_l": "HDQKD_SUBSPACE_L",
    "detector": "HDQKD_DETECTOR",
    "preset": "HDQKD_PRESET",
    "eve": "HDQKD_EVE",
    "eve_bias": "HDQKD_EVE_BIAS",
    "n_symbols": "HDQKD_N",
    "trials_per_mode": "HDQKD_TRIALS",
    "seed": "HDQKD_SEED",
    "threads": "HDQKD_THREADS",
    "output_dir": "HDQKD_OUT",
    "variant": "HDQKD_VARIANT",
    "mu": "HDQKD_MU",
}


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    for name, var in ENV_NAMES.items():
        if var in environ:
            values[name] = OPTIONS[name][1](environ[var])
    for name in OPTIONS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


# ----------------------------------------------------------------------------
# output helpers


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def heatmap_text(m: security.CrosstalkMatrix) -> str:
    """Character-shaded rendering of a crosstalk matrix, one line per row."""
    shades = " .:-=+*#%@"
    labels = m.labels
    lines = ["prepared \\ measured  " + " ".join(f"{lab:>5}" for lab in labels)]
    top = len(shades) - 1
    for lab, row in zip(labels, m.entries):
        cells = " ".join(f"{x:5.3f}" for x in row)
        bar = "".join(shades[min(int(x * top + 0.5), top)] for x in row)
        lines.append(f"{lab:>19}  {cells}  |{bar}|")
    return "\n".join(lines) + "\n"


def _dump_states(cfg: RunConfig, labels: list[str], out: Path, l: int) -> None:
    if not labels:
        return
    states = optics.generated_codebook(l)
    for lab in labels:
        if lab not in states:
            raise ValueError(f"unknown codebook label {lab!r}")
        _dump_json(states[lab].to_records(), out / f"state_{lab}.json")


def _config_dict(cfg: RunConfig, preset: channel.Preset) -> dict:
    d = asdict(cfg)
    d["subspace_l"] = cfg.l(preset)
    d["imperfections"] = asdict(preset.imperfections)
    d["source"] = asdict(preset.source)
    return d


# ----------------------------------------------------------------------------
# commands


def cmd_crosstalk(cfg: RunConfig, dump_states=()) -> dict:
    preset = cfg.load_preset()
    out = _prepare_out(cfg)
    l = cfg.l(preset)
    m = security.estimate_crosstalk(preset, cfg.trials_per_mode, cfg.seed, cfg.threads)
    m.to_csv(out / "crosstalk.csv")
    exact = detection.exact_crosstalk(l) if preset.imperfections.is_ideal else None
    report = {
        "config": _config_dict(cfg, preset),
        "labels": list(m.labels),
        "entries": m.entries.tolist(),
        "stderr": m.stderr.tolist(),
        "trials_per_mode": cfg.trials_per_mode,
        "fidelity": security.fidelity_from_matrix(m),
        "fidelity_stderr": security.fidelity_stderr(m),
        "off_basis_mean": float(
            (m.quadrant("vector", "scalar").mean() + m.quadrant("scalar", "vector").mean()) / 2
        ),
        "quadrant_row_sums": m.quadrant_row_sums().tolist(),
        "exact_born": exact.tolist() if exact is not None else None,
    }
    _dump_json(report, out / "crosstalk.json")
    text = heatmap_text(m)
    (out / "crosstalk_heatmap.txt").write_text(text)
    _dump_states(cfg, list(dump_states), out, l)
    print(text, end="")
    print(f"mean same-basis fidelity {report['fidelity']:.4f} +/- {report['fidelity_stderr']:.4f}")
    return report


def _write_key(key: protocol.SiftedKey, stem: Path) -> None:
    stem.with_suffix(".bin").write_bytes(key.to_bytes())
    stem.with_suffix(".hex").write_text(key.hex() + "\n")


def cmd_bb84(cfg: RunConfig, dump_states=()) -> dict:
    preset = cfg.load_preset()
    out = _prepare_out(cfg)
    eve = protocol.EveStrategy(cfg.eve, cfg.eve_bias)
    transcript = protocol.run_bb84(
        cfg.n_symbols, cfg.detector, eve, preset, cfg.seed, cfg.threads
    )
    alice_key, bob_key = protocol.sift(transcript)
    protocol.write_transcript(transcript, out / "transcript.ndjson")
    _write_key(alice_key, out / "alice_key")
    _write_key(bob_key, out / "bob_key")
    summary = protocol.summarize(transcript)
    summary["config"] = _config_dict(cfg, preset)
    _dump_json(summary, out / "bb84_summary.json")
    _dump_states(cfg, list(dump_states), out, cfg.l(preset))
    q = summary["qber"]
    print(
        f"sent {summary['n_symbols']}  clicked {summary['clicked']}  "
        f"retained {summary['retained_symbols']} ({summary['sift_fraction']:.3f})  "
        f"key {summary['key_bits']} bits  QBER {q if q is None else round(q, 4)}  "
        f"{summary['verdict']}"
    )
    return summary


def _table(rows: list[tuple[str, str, str]]) -> str:
    w = max(len(r[0]) for r in rows)
    head = f"{'measure':<{w}}  {'simulated':>10}  {'ideal':>8}"
    return "\n".join([head] + [f"{a:<{w}}  {b:>10}  {c:>8}" for a, b, c in rows]) + "\n"


def cmd_security(cfg: RunConfig, dump_states=()) -> dict:
    preset = cfg.load_preset()
    out = _prepare_out(cfg)
    m = security.estimate_crosstalk(preset, cfg.trials_per_mode, cfg.seed, cfg.threads)
    m.to_csv(out / "crosstalk.csv")
    rep = security.build_report(m, 4, cfg.variant)
    ideal = security.ideal_report(4, cfg.variant)
    doc = {
        "config": _config_dict(cfg, preset),
        "experiment": rep.to_dict(),
        "ideal": ideal.to_dict(),
        "notes": [
            "key rate uses the Alice-Eve branch only; no Bob-Eve information term is defined",
            f"I_AB error term divided by {'d' if cfg.variant == 'printed' else 'd-1'}",
        ],
    }
    if not preset.imperfections.is_ideal:
        doc["notes"].append(
            "the split of errors across imperfection knobs is a modelling choice; "
            "only depolarizing_p is fitted to the preset's target fidelity"
        )
    _dump_json(doc, out / "security_report.json")
    keys = [
        ("F", "fidelity"),
        ("I_AB", "mutual_info_ab"),
        ("F_E", "cloning_fidelity"),
        ("I_AE", "mutual_info_ae"),
        ("Q", "qber"),
        ("R", "key_rate"),
        ("R/d", "capacity_per_dimension"),
    ]
    e, i = rep.to_dict(), ideal.to_dict()
    text = _table([(k, f"{e[f]:.4f}", f"{i[f]:.2f}") for k, f in keys])
    text += f"verdict: {rep.verdict} (Q bound {rep.qber_bound})\n"
    (out / "security_table.txt").write_text(text)
    _dump_states(cfg, list(dump_states), out, cfg.l(preset))
    print(text, end="")
    return doc


def cmd_compare_detectors(cfg: RunConfig, dump_states=()) -> dict:
    preset = cfg.load_preset()
    out = _prepare_out(cfg)
    eve = protocol.EveStrategy(cfg.eve, cfg.eve_bias)
    res = {}
    for det in protocol.DETECTORS:
        tr = protocol.run_bb84(cfg.n_symbols, det, eve, preset, cfg.seed, cfg.threads)
        res[det] = protocol.summarize(tr)
    f_det = res["deterministic"]["sift_fraction"]
    f_fil = res["filter"]["sift_fraction"]
    doc = {
        "config": _config_dict(cfg, preset),
        "deterministic": res["deterministic"],
        "filter": res["filter"],
        "sift_ratio": f_det / f_fil if f_fil else None,
    }
    _dump_json(doc, out / "compare_detectors.json")
    _dump_states(cfg, list(dump_states), out, cfg.l(preset))
    ratio = doc["sift_ratio"]
    print(
        f"deterministic sift {f_det:.4f}  filter sift {f_fil:.4f}  "
        f"ratio {'n/a' if ratio is None else f'{ratio:.3f}'}"
    )
    return doc


class EmptyKeyError(ValueError):
    pass


def cmd_otp(in_path, key_path, out_path, key_bits: int | None = None) -> bool:
    """XOR ``in_path`` with the key file; returns True when the key was cycled."""
    key_path = Path(key_path)
    if key_path.suffix == ".hex":
        raw = bytes.fromhex(key_path.read_text().strip())
    else:
        raw = key_path.read_bytes()
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    if key_bits is not None:
        bits = bits[:key_bits]
    if len(bits) == 0:
        raise EmptyKeyError(f"key file {key_path} holds no key bits")
    data = Path(in_path).read_bytes()
    reused = protocol.keystream_repeats(len(data), bits)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", protocol.KeyStreamReuseWarning)
        Path(out_path).write_bytes(protocol.otp_encrypt(data, bits))
    return reused


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    for name, (flag, typ) in OPTIONS.items():
        kw = {"type": typ, "default": None, "dest": name}
        if name == "detector":
            kw["choices"] = protocol.DETECTORS
        if name == "eve":
            kw["choices"] = ("none", "intercept_resend")
        if name == "variant":
            kw["choices"] = security.VARIANTS
        common.add_argument(flag, **kw)
    common.add_argument(
        "--dump-state", action="append", default=[], metavar="LABEL",
        help="write the generated codebook state LABEL (e.g. V00, S11) as JSON",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hdqkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("crosstalk", parents=[common], help="estimate the 8x8 crosstalk matrix")
    sub.add_parser("bb84", parents=[common], help="run the prepare-and-measure protocol")
    sub.add_parser("security", parents=[common], help="security figures from a crosstalk estimate")
    sub.add_parser(
        "compare-detectors", parents=[common], help="sift rates of deterministic vs filter detection"
    )
    otp = sub.add_parser("otp", help="XOR a file with a key file (self-inverse)")
    otp.add_argument("input")
    otp.add_argument("key", help="raw key file, or .hex text")
    otp.add_argument("output")
    otp.add_argument("--key-bits", type=int, default=None, help="use only the first N key bits")
    return p


COMMANDS = {
    "crosstalk": cmd_crosstalk,
    "bb84": cmd_bb84,
    "security": cmd_security,
    "compare-detectors": cmd_compare_detectors,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "otp":
        try:
            reused = cmd_otp(args.input, args.key, args.output, args.key_bits)
        except EmptyKeyError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_EMPTY_KEY
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        if reused:
            print("warning: key shorter than input; key stream was repeated", file=sys.stderr)
        return 0
    try:
        cfg = resolve_config(args)
        unknown = [lab for lab in args.dump_state if lab not in optics.CODEBOOK_LABELS]
        if unknown:
            raise ValueError(f"unknown codebook label(s) {unknown}; use {optics.CODEBOOK_LABELS}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](cfg, args.dump_state)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
