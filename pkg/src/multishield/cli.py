"""Command-line interface.

Subcommands:
  train      build the dataset, train both classifiers and the encoder,
             write checkpoints
  evaluate   run all attack scenarios and write report.txt / report.csv
             plus per-sample decision logs
  sweep      robustness across a grid of perturbation radii, write
             sweep.csv and optionally an SVG figure
  decide     inspect the decision pipeline on a single input

evaluate and sweep are self-contained: missing checkpoints are trained on
the spot, and existing ones are accepted only if they were produced under
the same configuration (checked through the manifest's config hash).

Exit codes: 0 on success, 1 for configuration or usage errors, 2 when an
operation is refused (e.g. gradient attacks against a frozen encoder).

The run seed is resolved as: --seed flag, then the MULTISHIELD_SEED
environment variable, then the "seed" field of the config. It drives attack
randomness only; training seeds live in their own config sections.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .attacks import AttackConfig, adaptive_attack, pgd
from .classifier import train_adversarial, train_standard
from .data import (Dataset, build_prompts, load_embeddings, make_blobs,
                   save_dataset, save_embeddings, split_per_class)
from .evaluation import (epsilon_sweep, plot_sweep, run_evaluation,
                         write_manifest, write_report_csv, write_report_txt,
                         write_sweep_csv)
from .mlp import MLPClassifier
from .multimodal import DualEncoder, FrozenEncoder, train_dual_encoder
from .rng import Rng
from .shield import MultiShield

ENV_SEED = "MULTISHIELD_SEED"

DEFAULT_CONFIG = {
    "seed": 5,
    "data": {
        "seed": 11081,
        "K": 3,
        "d": 2,
        "n_per_class": 312,
        "spread": 0.01,
        "n_train_per_class": 12,
        "class_names": ["ruby", "jade", "azure"],
        "prompt_template": "a point from the {} cluster",
    },
    "classifier": {
        "hidden": [32, 32],
        "standard": {"epochs": 14, "batch_size": 32, "lr": 0.3, "seed": 26},
        "adversarial": {"epochs": 60, "batch_size": 32, "lr": 0.1,
                        "seed": 0, "eps": 0.05, "attack_steps": 10},
    },
    "encoder": {
        "hidden": [16],
        "embed_dim": 8,
        "epochs": 40,
        "batch_size": 32,
        "lr": 0.3,
        "seed": 16,
        "frozen": None,
    },
    "attack": {
        "eps": 0.05,
        "alpha": None,
        "steps": 40,
        "restarts": 3,
        "p": "inf",
        "adaptive": {"steps": 40, "restarts": 3, "k_t": 2, "lam": 1.0,
                     "momentum": 0.75},
    },
    "eval": {
        "sweep": {
            "eps_grid": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08],
            "steps": 1,
            "restarts": 1,
            "model": "adversarial",
        },
    },
}


# ---- config loading and validation ----

def _type_name(v) -> str:
    return type(v).__name__


def _check_leaf(path: str, value, default):
    if path == "attack.alpha":
        if value is None or (isinstance(value, (int, float))
                             and not isinstance(value, bool)):
            return value
        raise ValueError(f"field {path} must be a number or null, got {value!r}")
    if path == "attack.p":
        return value  # validated by AttackConfig
    if path == "encoder.frozen":
        if value is None:
            return None
        if not isinstance(value, dict):
            raise ValueError(f"field {path} must be an object or null")
        allowed = {"image_embeddings", "prompt_embeddings"}
        for k in value:
            if k not in allowed:
                raise ValueError(f"unknown field {path}.{k}")
        for k in sorted(allowed):
            if k not in value or not isinstance(value[k], str):
                raise ValueError(f"field {path}.{k} must be a file path string")
        return dict(value)
    if path in ("classifier.hidden", "encoder.hidden"):
        if (not isinstance(value, list) or
                not all(isinstance(v, int) and not isinstance(v, bool)
                        and v > 0 for v in value)):
            raise ValueError(f"field {path} must be a list of positive ints")
        return list(value)
    if path == "data.class_names":
        if (not isinstance(value, list) or len(value) < 2
                or not all(isinstance(v, str) for v in value)):
            raise ValueError(f"field {path} must be a list of 2+ strings")
        return list(value)
    if path == "eval.sweep.eps_grid":
        if (not isinstance(value, list) or not value
                or not all(isinstance(v, (int, float))
                           and not isinstance(v, bool) for v in value)):
            raise ValueError(f"field {path} must be a non-empty list of numbers")
        return [float(v) for v in value]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"field {path} must be a boolean, "
                             f"got {_type_name(value)}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValueError(f"field {path} must be an integer, "
                             f"got {_type_name(value)}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"field {path} must be a number, "
                             f"got {_type_name(value)}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"field {path} must be a string, "
                             f"got {_type_name(value)}")
        return value
    raise ValueError(f"field {path} has unsupported value {value!r}")


def _merge(defaults: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ValueError(f"unknown field {path}")
        if path == "attack.adaptive" and value is None:
            # null disables the adaptive scenario entirely
            out[key] = None
            continue
        if isinstance(defaults[key], dict) and path != "encoder.frozen":
            if not isinstance(value, dict):
                raise ValueError(f"field {path} must be an object")
            out[key] = _merge(defaults[key], value, prefix=f"{path}.")
        else:
            out[key] = _check_leaf(path, value, defaults[key])
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ValueError(f"cannot read config {path}: {e}") from e
    with f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    for key in DEFAULT_CONFIG:
        if key not in raw:
            raise ValueError(f"config is missing field {key}")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if cfg["data"]["K"] != len(cfg["data"]["class_names"]):
        raise ValueError(
            "field data.K must match the length of data.class_names")
    if cfg["data"]["n_train_per_class"] >= cfg["data"]["n_per_class"]:
        raise ValueError(
            "field data.n_train_per_class must be smaller than data.n_per_class")
    return cfg


def config_text(cfg: dict) -> str:
    """Canonical serialization used for the manifest hash. Computed before
    any --seed override, so checkpoint validity does not depend on the run
    seed."""
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def resolve_seed(args, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(
                f"environment variable {ENV_SEED} must be an integer, "
                f"got {env!r}") from None
    return cfg["seed"]


# ---- shared pipeline pieces ----

def build_data(cfg: dict):
    dc = cfg["data"]
    full = make_blobs(dc["seed"], dc["K"], dc["d"], dc["n_per_class"],
                      dc["spread"], class_names=dc["class_names"])
    train, test = split_per_class(full, dc["n_train_per_class"])
    prompts = build_prompts(dc["prompt_template"], dc["class_names"])
    return full, train, test, prompts


def _paths(out: str) -> dict:
    return {
        "standard": os.path.join(out, "classifier_standard.ckpt"),
        "adversarial": os.path.join(out, "classifier_adversarial.ckpt"),
        "encoder": os.path.join(out, "encoder.ckpt"),
        "dataset": os.path.join(out, "dataset.msds"),
        "manifest": os.path.join(out, "manifest.json"),
    }


def train_models(cfg: dict, train_ds: Dataset, prompts):
    cc = cfg["classifier"]
    std = train_standard(train_ds, cc["hidden"], cc["standard"]["epochs"],
                         cc["standard"]["batch_size"], cc["standard"]["lr"],
                         Rng(cc["standard"]["seed"], "classifier-standard"))
    at = train_adversarial(train_ds, cc["hidden"],
                           cc["adversarial"]["epochs"],
                           cc["adversarial"]["batch_size"],
                           cc["adversarial"]["lr"],
                           Rng(cc["adversarial"]["seed"],
                               "classifier-adversarial"),
                           cc["adversarial"]["eps"],
                           cc["adversarial"]["attack_steps"])
    ec = cfg["encoder"]
    encoder = None
    if ec["frozen"] is None:
        encoder = train_dual_encoder(train_ds, prompts, ec["hidden"],
                                     ec["embed_dim"], ec["epochs"],
                                     ec["batch_size"], ec["lr"],
                                     Rng(ec["seed"], "encoder"))
    return std, at, encoder


def _load_frozen(cfg: dict) -> FrozenEncoder:
    fr = cfg["encoder"]["frozen"]
    img, kind = load_embeddings(fr["image_embeddings"])
    if kind != "image":
        raise ValueError(
            f"{fr['image_embeddings']} holds {kind!r} embeddings, "
            f"expected 'image'")
    prm, kind = load_embeddings(fr["prompt_embeddings"])
    if kind != "prompt":
        raise ValueError(
            f"{fr['prompt_embeddings']} holds {kind!r} embeddings, "
            f"expected 'prompt'")
    if prm.shape[0] != cfg["data"]["K"]:
        raise ValueError(
            f"prompt embedding count {prm.shape[0]} does not match "
            f"data.K = {cfg['data']['K']}")
    return FrozenEncoder(img, prm)


def ensure_models(cfg: dict, out: str, seed: int):
    """Load checkpoints from `out` when they match the config, train and
    save them otherwise. Writes the manifest as soon as training finishes,
    so `out` stays loadable even if the command then fails."""
    paths = _paths(out)
    full, train_ds, test_ds, prompts = build_data(cfg)
    text = config_text(cfg)
    frozen = cfg["encoder"]["frozen"] is not None

    wanted = [paths["standard"], paths["adversarial"]]
    if not frozen:
        wanted.append(paths["encoder"])
    have_all = all(os.path.exists(p) for p in wanted)
    have_any = any(os.path.exists(p) for p in wanted)

    if have_all:
        if not os.path.exists(paths["manifest"]):
            raise ValueError(
                f"checkpoints in {out} have no manifest; retrain with "
                f"'multishield train' or point --out elsewhere")
        with open(paths["manifest"], "r", encoding="utf-8") as f:
            manifest = json.load(f)
        want_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if manifest.get("config_sha256") != want_hash:
            raise ValueError(
                f"checkpoints in {out} were trained under a different "
                f"config; retrain or point --out elsewhere")
        std = MLPClassifier.load(paths["standard"])
        at = MLPClassifier.load(paths["adversarial"])
        encoder = None if frozen else DualEncoder.load(paths["encoder"])
    else:
        if have_any:
            raise ValueError(
                f"{out} holds a partial checkpoint set; delete it or point "
                f"--out elsewhere")
        os.makedirs(out, exist_ok=True)
        std, at, encoder = train_models(cfg, train_ds, prompts)
        std.save(paths["standard"])
        at.save(paths["adversarial"])
        if encoder is not None:
            encoder.save(paths["encoder"])
        save_dataset(paths["dataset"], full)
        _write_run_manifest(cfg, out, seed)

    if frozen:
        encoder = _load_frozen(cfg)
        if encoder.count != test_ds.n:
            raise ValueError(
                f"frozen image embeddings hold {encoder.count} rows, test "
                f"split has {test_ds.n} samples (they are keyed by index)")
    return full, train_ds, test_ds, prompts, {"standard": std,
                                              "adversarial": at}, encoder


def _write_run_manifest(cfg: dict, out: str, seed: int) -> None:
    write_manifest(_paths(out)["manifest"], config_text(cfg), seed,
                   __version__)


def _attack_cfgs(cfg: dict):
    ac = cfg["attack"]
    naive = AttackConfig(eps=ac["eps"], alpha=ac["alpha"], steps=ac["steps"],
                         restarts=ac["restarts"], p=ac["p"])
    ad = ac["adaptive"]
    if ad is None:
        return naive, None
    adaptive = AttackConfig(eps=ac["eps"], alpha=ac["alpha"],
                            steps=ad["steps"], restarts=ad["restarts"],
                            p=ac["p"], k_t=ad["k_t"], lam=ad["lam"],
                            momentum=ad["momentum"])
    return naive, adaptive


# ---- subcommands ----

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args, cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)
    paths = _paths(out)
    full, train_ds, test_ds, prompts = build_data(cfg)
    std, at, encoder = train_models(cfg, train_ds, prompts)
    std.save(paths["standard"])
    at.save(paths["adversarial"])
    save_dataset(paths["dataset"], full)
    print(f"standard classifier: train accuracy "
          f"{(std.predict(train_ds.X) == train_ds.y).mean():.3f}")
    print(f"adversarial classifier: train accuracy "
          f"{(at.predict(train_ds.X) == train_ds.y).mean():.3f}")
    if encoder is not None:
        encoder.save(paths["encoder"])
        zs = (encoder.zero_shot_predict(test_ds.X) == test_ds.y).mean()
        print(f"encoder: zero-shot test accuracy {zs:.3f}")
        if args.export_embeddings:
            save_embeddings(os.path.join(out, "image_embeddings.msemb"),
                            encoder.encode_image(test_ds.X), "image")
            save_embeddings(os.path.join(out, "prompt_embeddings.msemb"),
                            encoder.encode_prompts(), "prompt")
            print("exported test-set image and prompt embeddings")
    else:
        print("encoder: frozen mode configured, nothing to train")
    _write_run_manifest(cfg, out, seed)
    print(f"checkpoints written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args, cfg)
    out = args.out
    _, _, test_ds, _, models, encoder = ensure_models(cfg, out, seed)
    naive_cfg, adaptive_cfg = _attack_cfgs(cfg)
    outcomes, timings, notes = run_evaluation(
        models, encoder, test_ds, naive_cfg, adaptive_cfg, seed,
        workers=args.workers, log_dir=out)
    write_report_csv(os.path.join(out, "report.csv"), outcomes)
    write_report_txt(os.path.join(out, "report.txt"), outcomes, timings,
                     notes)
    _write_run_manifest(cfg, out, seed)
    with open(os.path.join(out, "report.txt"), "r", encoding="utf-8") as f:
        sys.stdout.write(f.read())
    print(f"report written to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args, cfg)
    out = args.out
    _, _, test_ds, _, models, encoder = ensure_models(cfg, out, seed)
    sw = cfg["eval"]["sweep"]
    if sw["model"] not in models:
        raise ValueError(
            f"field eval.sweep.model must be one of {sorted(models)}, "
            f"got {sw['model']!r}")
    base = AttackConfig(eps=max(sw["eps_grid"][-1], 0.0),
                        alpha=cfg["attack"]["alpha"], steps=sw["steps"],
                        restarts=sw["restarts"], p=cfg["attack"]["p"])
    rows = epsilon_sweep(models[sw["model"]], encoder, test_ds,
                         sw["eps_grid"], base, seed)
    write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    if args.svg is not None:
        svg_path = args.svg if args.svg != "" else os.path.join(out, "sweep.svg")
        plot_sweep(svg_path, rows)
        print(f"figure written to {svg_path}")
    _write_run_manifest(cfg, out, seed)
    for r in rows:
        print(f"eps={r.eps:g}: baseline {r.baseline.robust_accuracy:.3f}, "
              f"shield {r.shield.robust_accuracy:.3f}, "
              f"rejected {r.shield.rejection_ratio:.3f}")
    print(f"sweep written to {os.path.join(out, 'sweep.csv')}")
    return 0


def cmd_decide(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args, cfg)
    out = args.out
    _, _, test_ds, _, models, encoder = ensure_models(cfg, out, seed)
    clf = models[args.model]
    shield = MultiShield(clf, encoder)
    frozen = not encoder.differentiable

    if (args.index is None) == (args.input is None):
        raise ValueError("decide needs exactly one of --index or --input")
    if args.index is not None:
        if not (0 <= args.index < test_ds.n):
            raise ValueError(
                f"--index must lie in 0..{test_ds.n - 1}")
        x = test_ds.X[args.index]
        true_label = int(test_ds.y[args.index])
    else:
        try:
            x = np.array([float(v) for v in args.input.split(",")])
        except ValueError:
            raise ValueError(
                "--input must be comma-separated numbers") from None
        if x.shape[0] != test_ds.d:
            raise ValueError(
                f"--input must have {test_ds.d} components")
        true_label = None
        if frozen:
            raise RuntimeError(
                "a frozen encoder only scores indexed samples; use --index")

    if args.attack != "none":
        if frozen:
            raise RuntimeError(
                "a frozen encoder cannot score perturbed inputs; "
                "attacks need the trainable encoder")
        naive_cfg, adaptive_cfg = _attack_cfgs(cfg)
        label = true_label if true_label is not None else int(clf.predict(x)[0])
        if args.attack == "naive":
            res = pgd(clf, x, label, naive_cfg, seed,
                      sample_indices=[args.index or 0])
        else:
            if adaptive_cfg is None:
                raise RuntimeError(
                    "the adaptive attack is disabled in this configuration "
                    "(attack.adaptive is null)")
            trace = None
            if args.trace:
                def trace(rec):
                    print(f"  target={rec['target']} r={rec['restart']} "
                          f"step={rec['step']} obj={rec['objective']:.6f} "
                          f"mf={rec['margin_f']:.6f} "
                          f"mh={rec['margin_h']:.6f} lam={rec['lam']:g}")
            res = adaptive_attack(shield, x, label, adaptive_cfg, seed,
                                  sample_index=args.index or 0, trace=trace)
            print(f"adaptive attack "
                  f"{'succeeded' if res.success else 'failed'}"
                  + (f" (target {res.target})" if res.target else ""))
        x = np.asarray(res.x_adv).ravel()

    if frozen:
        dec = shield.decide_by_index(test_ds.X[args.index], [args.index])[0]
    else:
        dec = shield.decide(x)
    names = test_ds.class_names
    print(f"input: [{', '.join(f'{v:.6f}' for v in x)}]")
    if true_label is not None:
        print(f"true label: {true_label} ({names[true_label - 1]})")
    print(f"classifier label: {dec.classifier_label} "
          f"({names[dec.classifier_label - 1]})")
    score_bits = " ".join(f"{k + 1}={dec.scores[k]:.6f}"
                          for k in range(len(dec.scores)))
    print(f"alignment scores: {score_bits}")
    print(f"rejection score: {dec.rejection_score!r}")
    if dec.accepted:
        print(f"final: {dec.final_label} (accepted)")
    else:
        print(f"final: {dec.final_label} (rejected)")
    return 0


# ---- parser ----

class _Parser(argparse.ArgumentParser):
    # usage problems count as configuration errors: exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(2)


def _add_common(p):
    p.add_argument("--config", default=None,
                   help="JSON run configuration (defaults to the built-in "
                        "toy setup)")
    p.add_argument("--seed", type=int, default=None,
                   help=f"run seed (overrides {ENV_SEED} and the config)")
    p.add_argument("--out", default="runs/toy",
                   help="output directory (default: runs/toy)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multishield",
                     description="Agreement-based rejection defense testbed")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("train", help="train classifiers and encoder")
    _add_common(p)
    p.add_argument("--export-embeddings", action="store_true",
                   help="also write test-set image and prompt embedding files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run all attack scenarios")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes for per-sample attacks (default 1)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="robustness across perturbation radii")
    _add_common(p)
    p.add_argument("--svg", nargs="?", const="", default=None,
                   help="write an SVG figure (optionally to a given path)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decide", help="inspect one decision")
    _add_common(p)
    p.add_argument("--model", choices=["standard", "adversarial"],
                   default="standard")
    p.add_argument("--index", type=int, default=None,
                   help="test-set sample index")
    p.add_argument("--input", default=None,
                   help="comma-separated input coordinates")
    p.add_argument("--attack", choices=["none", "naive", "adaptive"],
                   default="none", help="perturb the input first")
    p.add_argument("--trace", action="store_true",
                   help="print adaptive attack progress")
    p.set_defaults(func=cmd_decide)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise ValueError("--workers must be at least 1")
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except RuntimeError as e:
        sys.stderr.write(f"refused: {e}\n")
        return 2
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
