"""Experiment configuration files.

The format is sectioned ``key = value`` text::

    seed = 7
    rounds = 200
    strategy = collective

    [keep_ratio_groups]
    0.2 = 0.6
    0.4 = 0.4

    [task]
    kind = classification
    hidden_dims = 32, 32

Keys before the first header belong to ``[experiment]``. Lists are comma
separated. Lines starting with ``#`` or ``;`` are comments.
"""

import configparser
import math
import re
from dataclasses import dataclass, field

from .designs import DesignKind
from .errors import ValidationError
from .fedsim.model import LocalHyper
from .fedsim.server import SimulationConfig, TaskSpec
from .plans import Strategy

EXPERIMENT = "experiment"
RECORD_FIELDS = ("round", "train_loss", "train_metric", "unbiased_discrepancy",
                 "collective_discrepancy", "anme_layers", "anme", "cosine", "wall_clock")
DEFAULT_EMIT = RECORD_FIELDS[:7]

# key -> (parser, default)
_EXPERIMENT_KEYS = {
    "seed": (int, 0),
    "rounds": (int, 200),
    "clients": (int, 10),
    "participants_per_round": (int, 10),
    "local_epochs": (int, 2),
    "batch_size": (int, 32),
    "lr0": (float, 0.1),
    "momentum": (float, 0.9),
    "frobenius_decay": (float, 1e-4),
    "tau": (float, 10.0),
    "strategy": (Strategy.parse, Strategy.COLLECTIVE),
    "design": (DesignKind.parse, DesignKind.CPS),
    "emit": ("list:str", DEFAULT_EMIT),
    "cosine": ("bool", False),
    "prism_trials": (int, 100_000),
}
_TASK_KEYS = {
    "kind": (str, "classification"),
    "input_dim": (int, 20),
    "hidden_dims": ("list:int", (32, 32)),
    "n_classes": (int, 4),
    "samples_per_client": (int, 64),
    "dirichlet_alpha": (float, 1.0),
}
_PLAN_KEYS = {
    "strategy": (Strategy.parse, Strategy.UNBIASED),
    "n": (int, 0),
    "keep_ratio": (float, 0.0),
    "group_size": (int, 1),
}
_SAMPLE_KEYS = {
    "design": (DesignKind.parse, DesignKind.CPS),
    "trials": (int, 10),
}
_VERIFY_KEYS = {
    "design": (DesignKind.parse, DesignKind.CPS),
    "trials": (int, 100_000),
}
_SECTIONS = {EXPERIMENT: _EXPERIMENT_KEYS, "task": _TASK_KEYS, "plan": _PLAN_KEYS,
             "sample": _SAMPLE_KEYS, "verify": _VERIFY_KEYS}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration with every field defaulted."""

    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    emit: tuple = DEFAULT_EMIT
    plan: dict = field(default_factory=lambda: _defaults(_PLAN_KEYS))
    sample: dict = field(default_factory=lambda: _defaults(_SAMPLE_KEYS))
    verify: dict = field(default_factory=lambda: _defaults(_VERIFY_KEYS))

    @property
    def seed(self):
        return self.simulation.seed


def _defaults(keys):
    return {k: default for k, (_, default) in keys.items()}


def _line_index(text):
    """Map (section, key) to the 1-based line where it is set."""
    where, section = {}, EXPERIMENT
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        head = re.fullmatch(r"\[([^\]]+)\]\s*(?:[#;].*)?", line)
        if head:
            section = head.group(1).strip().lower()
            where.setdefault((section, None), no)
        elif line and line[0] not in "#;":
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            where.setdefault((section, key), no)
    return where


def _convert(parser, raw):
    if parser == "bool":
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(parser, str) and parser.startswith("list:"):
        item = {"int": int, "str": str}[parser.split(":")[1]]
        return tuple(item(x.strip()) for x in raw.split(",") if x.strip())
    return parser(raw.strip())


def parse_config_text(text, source="<config>"):
    """Parse and validate configuration text; see the module docstring."""
    where = _line_index(text)

    def fail(section, key, message):
        line = where.get((section, key)) or where.get((section, None))
        loc = f"{source}:{line}" if line else source
        name = f"[{section}] {key}" if key else f"[{section}]"
        raise ValidationError(f"{loc}: {name}: {message}")

    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str.lower
    body = text if re.match(r"\s*\[", text or "") else f"[{EXPERIMENT}]\n{text}"
    try:
        parser.read_string(body, source=source)
    except configparser.Error as exc:
        raise ValidationError(f"{source}: {exc.message if hasattr(exc, 'message') else exc}") from None

    values = {name: _defaults(keys) for name, keys in _SECTIONS.items()}
    groups = None
    for section in parser.sections():
        if section == "keep_ratio_groups":
            groups = []
            for key, raw in parser.items(section):
                try:
                    groups.append((float(key), float(raw)))
                except ValueError:
                    fail(section, key, "ratio and fraction must be numbers")
            continue
        if section not in _SECTIONS:
            fail(section, None, "unknown section")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                fail(section, key, "unknown key")
            try:
                values[section][key] = _convert(_SECTIONS[section][key][0], raw)
            except (ValueError, ValidationError) as exc:
                fail(section, key, str(exc))

    exp = values[EXPERIMENT]
    if exp["tau"] < 1:
        fail(EXPERIMENT, "tau", f"clipping threshold must satisfy tau >= 1, got {exp['tau']}")
    if not 0 <= exp["momentum"] < 1:
        fail(EXPERIMENT, "momentum", "must lie in [0, 1)")
    if not (exp["lr0"] > 0 and math.isfinite(exp["lr0"])):
        fail(EXPERIMENT, "lr0", "must be a positive finite number")
    if exp["frobenius_decay"] < 0:
        fail(EXPERIMENT, "frobenius_decay", "must be >= 0")
    for name in ("rounds", "clients", "participants_per_round", "batch_size", "prism_trials"):
        if exp[name] < 1:
            fail(EXPERIMENT, name, "must be >= 1")
    if exp["local_epochs"] < 0:
        fail(EXPERIMENT, "local_epochs", "must be >= 0")
    if exp["participants_per_round"] > exp["clients"]:
        fail(EXPERIMENT, "participants_per_round", "cannot exceed clients")
    bad = [e for e in exp["emit"] if e not in RECORD_FIELDS]
    if bad or not exp["emit"]:
        fail(EXPERIMENT, "emit", f"unknown record fields {bad}; choose from {', '.join(RECORD_FIELDS)}")

    groups = tuple(groups) if groups is not None else ((0.2, 1.0),)
    if not groups:
        fail("keep_ratio_groups", None, "at least one group is required")
    for ratio, frac in groups:
        if not 0 < ratio <= 1:
            fail("keep_ratio_groups", None, f"keep ratio {ratio} outside (0, 1]")
        if not 0 <= frac <= 1:
            fail("keep_ratio_groups", None, f"fraction {frac} outside [0, 1]")
    total = sum(f for _, f in groups)
    if abs(total - 1.0) > 1e-9:
        fail("keep_ratio_groups", None, f"fractions must sum to 1, got {total:.12g}")

    task = values["task"]
    if task["kind"] not in ("classification", "regression"):
        fail("task", "kind", "must be classification or regression")
    if not 2 <= len(task["hidden_dims"]) <= 4 or min(task["hidden_dims"]) < 1:
        fail("task", "hidden_dims", "need 2 to 4 positive widths (1 to 3 factorized layers)")
    for name in ("input_dim", "samples_per_client"):
        if task[name] < 1:
            fail("task", name, "must be >= 1")
    if task["n_classes"] < 2:
        fail("task", "n_classes", "must be >= 2")
    if not task["dirichlet_alpha"] > 0:
        fail("task", "dirichlet_alpha", "must be > 0")

    plan = values["plan"]
    if plan["n"] < 0 or plan["group_size"] < 1 or not 0 <= plan["keep_ratio"] <= 1:
        fail("plan", None, "need n >= 0, group_size >= 1, keep_ratio in [0, 1]")
    for name in ("sample", "verify"):
        if values[name]["trials"] < 1:
            fail(name, "trials", "must be >= 1")

    hyper = LocalHyper(learning_rate=exp["lr0"], momentum=exp["momentum"],
                       frobenius_decay=exp["frobenius_decay"], clip_threshold=exp["tau"],
                       local_epochs=exp["local_epochs"], batch_size=exp["batch_size"])
    sim = SimulationConfig(
        seed=exp["seed"], rounds=exp["rounds"], clients=exp["clients"],
        participants_per_round=exp["participants_per_round"], hyper=hyper,
        strategy=exp["strategy"], design=exp["design"], keep_ratio_groups=groups,
        task=TaskSpec(**task), cosine=exp["cosine"] or "cosine" in exp["emit"],
        prism_trials=exp["prism_trials"])
    return ExperimentConfig(sim, tuple(exp["emit"]), plan, values["sample"], values["verify"])


def parse_config(path):
    """Read and validate a configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, source=str(path))
