"""Declarative experiment configs.

A config is a YAML mapping with nested sections.  :meth:`ExperimentConfig.from_dict`
validates everything up front and collects every problem into a single
:class:`~advsep.exceptions.ConfigError`; :meth:`ExperimentConfig.to_dict` is the
canonical echo stored in reports and is enough to replay a run bit-exactly.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..attack import AttackSpec
from ..exceptions import ConfigError
from ..training import TrainConfig

KINDS = (
    "init_separability",
    "ntk_separability",
    "corollary_adv_examples",
    "large_eta",
    "theory_suite",
    "train_and_probe",
    "ingest_and_probe",
)

FORMATS = ("json", "csv", "plotdata")

THEORY_CHECKS = (
    "moments",
    "split_residual",
    "h_norm",
    "inner_product",
    "margin_threshold",
    "subexp",
    "sparse_vector",
    "chi_square",
)

# pass thresholds; every entry can be overridden from the config's criteria section
CRITERIA_DEFAULTS = {
    "init_separability": {
        "separable_seed_fraction": 0.95,
        "margin_threshold": 1.0 / 32.0,
        "statistic_seed_fraction": 1.0,
        "agreement": 1.0,
        "probe_train_accuracy": 1.0,
        "probe_test_accuracy": 0.99,
        "probe_seed_fraction": 0.9,
    },
    "ntk_separability": {
        "separable_seed_fraction": 0.95,
        "margin_threshold": 1.0 / 32.0,
        "term_constant": 5.0,
        "term_seed_fraction": 1.0,
        "identity_rtol": 1e-9,
        "agreement": 1.0,
    },
    "corollary_adv_examples": {
        "separable_seed_fraction": 0.95,
        "orthogonality_tol": 1e-8,
    },
    "large_eta": {
        "perturbation_constant": 10.0,
        "probe_train_accuracy": 0.99,
    },
    "theory_suite": {},
    "train_and_probe": {
        "lr_order_fraction": 0.6,
        "noise_vs_raw_fraction": 0.9,
    },
    "ingest_and_probe": {},
}

DEFAULT_THEORY_GRID = (
    {"check": "moments", "d": 256, "m": 512, "trials": 10_000, "sampler": "full"},
    {"check": "split_residual", "d": 128, "m": 512, "trials": 1000},
    {"check": "h_norm", "d": 64, "m": 64, "trials": 100_000},
    {"check": "h_norm", "d": 64, "m": 8, "trials": 100_000},
    {"check": "inner_product", "d": 4096, "m": 1024, "trials": 10_000, "constants": {"c2": 1.0 / 64.0}},
    {"check": "inner_product", "d": 16, "m": 64, "trials": 10_000, "constants": {"c2": 4.0}},
    *(
        {"check": "chi_square", "d": dof, "trials": 100_000, "z": z, "side": side}
        for dof in (16, 64, 256)
        for z, side in ((0.5, "lower"), (2.0, "upper"))
    ),
    {"check": "subexp", "d": 512, "m": 2048, "trials": 1000, "sampler": "full"},
    {"check": "margin_threshold", "d": 512, "m": 2048, "trials": 1000},
    {"check": "sparse_vector", "d": 512, "m": 2048, "trials": 1000, "sparsity": 35},
)

_NEEDS_DIMS = {"init_separability", "ntk_separability", "corollary_adv_examples", "large_eta", "train_and_probe"}
_TOP_KEYS = {
    "kind", "dims", "seeds", "data", "attack", "attacks", "train", "learning_rates", "probe",
    "perceptron", "perturbation", "large_eta", "theory", "ingest", "criteria", "output", "n_jobs",
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    d: int = 0
    m: int = 0
    n: int = 0
    n_test: int = 0
    seed_base: int = 0
    seed_count: int = 1
    separation: float = 0.5
    attack: AttackSpec = field(default_factory=AttackSpec)
    attacks: tuple = ()
    train: TrainConfig | None = None
    learning_rates: tuple = ()
    probe_max_iter: int = 50
    perceptron_max_epochs: int = 1000
    radius_w: float = 1.0
    radius_a: float = 1.0
    perturbation_source: str = "ball"
    eta_exponent: float = 0.25
    theory_checks: tuple = ()
    ingest: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    output_dir: str | None = None
    formats: tuple = FORMATS
    save_noise: bool = False
    n_jobs: int = 1

    @property
    def seeds(self):
        return [self.seed_base + i for i in range(self.seed_count)]

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, raw):
        """Validate ``raw`` and build a config, or raise ConfigError listing every problem."""
        diag = {}
        if not isinstance(raw, dict):
            raise ConfigError({"<root>": "config must be a mapping"})
        raw = copy.deepcopy(raw)
        for key in sorted(set(raw) - _TOP_KEYS):
            diag[key] = "unknown section"

        kind = raw.get("kind")
        if kind not in KINDS:
            diag["kind"] = f"must be one of {', '.join(KINDS)}"
            raise ConfigError(diag)
        kw = {"kind": kind}

        def section(name):
            sec = raw.get(name, {}) or {}
            if not isinstance(sec, dict):
                diag[name] = "must be a mapping"
                return {}
            return sec

        def take_int(sec, name, key, minimum, default=None, required=False):
            if key not in sec:
                if required:
                    diag[f"{name}.{key}"] = "required"
                return default
            v = sec[key]
            if not _is_int(v) or v < minimum:
                diag[f"{name}.{key}"] = f"must be an integer >= {minimum}, got {v!r}"
                return default
            return v

        def take_num(sec, name, key, default, positive=False, nonneg=False):
            if key not in sec:
                return default
            v = sec[key]
            if not _is_num(v) or (positive and v <= 0) or (nonneg and v < 0):
                req = "a positive number" if positive else "a non-negative number" if nonneg else "a finite number"
                diag[f"{name}.{key}"] = f"must be {req}, got {v!r}"
                return default
            return float(v)

        dims = section("dims")
        need = kind in _NEEDS_DIMS
        kw["d"] = take_int(dims, "dims", "d", 1, 0, need)
        kw["m"] = take_int(dims, "dims", "m", 1, 0, need)
        kw["n"] = take_int(dims, "dims", "n", 2, 0, need)
        kw["n_test"] = take_int(dims, "dims", "n_test", 0, 0)
        if kind == "corollary_adv_examples" and kw["d"] and kw["n"] and kw["n"] >= kw["d"]:
            diag["dims.n"] = f"needs n < d so the inputs leave a complement (n={kw['n']}, d={kw['d']})"

        seeds = section("seeds")
        kw["seed_base"] = take_int(seeds, "seeds", "base", 0, 0)
        kw["seed_count"] = take_int(seeds, "seeds", "count", 1, 1)

        data = section("data")
        kw["separation"] = take_num(data, "data", "separation", 0.5, nonneg=True)

        kw["attack"] = cls._attack(raw.get("attack", {}) or {}, "attack", diag)
        attacks = raw.get("attacks", []) or []
        parsed = []
        if not isinstance(attacks, list):
            diag["attacks"] = "must be a list of named attack specs"
        else:
            names = set()
            for i, entry in enumerate(attacks):
                where = f"attacks[{i}]"
                if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
                    diag[where] = "each entry needs a string 'name' plus attack fields"
                    continue
                if entry["name"] in names:
                    diag[f"{where}.name"] = f"duplicate name {entry['name']!r}"
                names.add(entry["name"])
                body = {k: v for k, v in entry.items() if k != "name"}
                spec = cls._attack(body, where, diag)
                if spec is not None:
                    parsed.append((entry["name"], spec))
        kw["attacks"] = tuple(parsed)

        if "train" in raw:
            train = section("train")
            try:
                kw["train"] = TrainConfig(
                    lr=float(train.get("lr", 0.05)),
                    steps=train.get("steps", 100),
                    snapshot_every=train.get("snapshot_every", 0),
                    layers=train.get("layers", "both"),
                    temperature=float(train.get("temperature", 1.0)),
                )
            except (TypeError, ValueError) as exc:
                diag["train"] = str(exc)
        elif kind == "train_and_probe" or (kind == "ntk_separability" and
                                            (section("perturbation").get("source") == "train")):
            diag["train"] = "required for this kind"

        lrs = raw.get("learning_rates")
        if lrs is not None:
            if not isinstance(lrs, list) or not lrs or not all(_is_num(v) and v > 0 for v in lrs):
                diag["learning_rates"] = "must be a non-empty list of positive numbers"
            else:
                kw["learning_rates"] = tuple(float(v) for v in lrs)
        elif kw.get("train") is not None and kind == "train_and_probe":
            kw["learning_rates"] = (kw["train"].lr,)

        kw["probe_max_iter"] = take_int(section("probe"), "probe", "max_iter", 1, 50)
        kw["perceptron_max_epochs"] = take_int(section("perceptron"), "perceptron", "max_epochs", 1, 1000)

        pert = section("perturbation")
        kw["radius_w"] = take_num(pert, "perturbation", "radius_w", 1.0, nonneg=True)
        kw["radius_a"] = take_num(pert, "perturbation", "radius_a", 1.0, nonneg=True)
        source = pert.get("source", "ball")
        if source not in ("ball", "train"):
            diag["perturbation.source"] = "must be 'ball' or 'train'"
        kw["perturbation_source"] = source

        kw["eta_exponent"] = take_num(section("large_eta"), "large_eta", "eta_exponent", 0.25, nonneg=True)

        if kind == "theory_suite":
            checks = section("theory").get("checks", list(DEFAULT_THEORY_GRID))
            kw["theory_checks"] = cls._theory(checks, diag)

        ingest = section("ingest")
        if kind == "ingest_and_probe":
            out = {}
            if not isinstance(ingest.get("path"), str) or not ingest.get("path"):
                diag["ingest.path"] = "required (path to a noise CSV)"
            else:
                out["path"] = ingest["path"]
            ed = ingest.get("expected_dim")
            if ed is not None and (not _is_int(ed) or ed < 1):
                diag["ingest.expected_dim"] = "must be a positive integer"
            out["expected_dim"] = ed
            tf = ingest.get("test_fraction", 0.5)
            if not _is_num(tf) or not 0 < tf < 1:
                diag["ingest.test_fraction"] = "must lie strictly between 0 and 1"
            out["test_fraction"] = float(tf) if _is_num(tf) else 0.5
            classes = ingest.get("classes")
            if classes is not None and (not _is_int(classes) or classes < 2):
                diag["ingest.classes"] = "must be an integer >= 2"
            out["classes"] = classes
            kw["ingest"] = out

        crit = section("criteria")
        merged = dict(CRITERIA_DEFAULTS[kind])
        for key, v in crit.items():
            if key not in merged:
                diag[f"criteria.{key}"] = f"unknown criterion for {kind}"
            elif not _is_num(v) or v < 0:
                diag[f"criteria.{key}"] = f"must be a non-negative number, got {v!r}"
            else:
                merged[key] = float(v)
        kw["criteria"] = merged

        out = section("output")
        d = out.get("dir")
        if d is not None and not isinstance(d, str):
            diag["output.dir"] = "must be a string path"
        kw["output_dir"] = d
        fmts = out.get("formats", list(FORMATS))
        if not isinstance(fmts, list) or not fmts or any(f not in FORMATS for f in fmts):
            diag["output.formats"] = f"must be a non-empty subset of {list(FORMATS)}"
        else:
            kw["formats"] = tuple(f for f in FORMATS if f in fmts)
        save = out.get("save_noise", False)
        if not isinstance(save, bool):
            diag["output.save_noise"] = "must be true or false"
        kw["save_noise"] = bool(save)

        nj = raw.get("n_jobs", 1)
        if not _is_int(nj) or nj == 0 or nj < -1:
            diag["n_jobs"] = "must be a positive integer or -1"
        kw["n_jobs"] = nj

        if diag:
            raise ConfigError(diag)
        return cls(**kw)

    @staticmethod
    def _attack(sec, where, diag):
        if not isinstance(sec, dict):
            diag[where] = "must be a mapping"
            return None
        allowed = {"method", "eta", "steps", "epsilon", "norm", "temperature"}
        extra = set(sec) - allowed
        if extra:
            diag[where] = f"unknown fields {sorted(extra)}"
            return None
        try:
            return AttackSpec(**sec)
        except (TypeError, ValueError) as exc:
            diag[where] = str(exc)
            return None

    @staticmethod
    def _theory(checks, diag):
        if not isinstance(checks, list) or not checks:
            diag["theory.checks"] = "must be a non-empty list"
            return ()
        out = []
        for i, entry in enumerate(checks):
            where = f"theory.checks[{i}]"
            if not isinstance(entry, dict) or entry.get("check") not in THEORY_CHECKS:
                diag[where] = f"needs 'check' in {list(THEORY_CHECKS)}"
                continue
            entry = dict(entry)
            needs_m = entry["check"] != "chi_square"
            for key in ("d", "trials") + (("m",) if needs_m else ()):
                if not _is_int(entry.get(key)) or entry[key] < 1:
                    diag[f"{where}.{key}"] = "required positive integer"
            if entry["check"] == "chi_square":
                if entry.get("side") not in ("lower", "upper"):
                    diag[f"{where}.side"] = "must be 'lower' or 'upper'"
                z = entry.get("z")
                if not _is_num(z) or z <= 0:
                    diag[f"{where}.z"] = "must be a positive number"
                elif entry.get("side") == "lower" and z >= 1 or entry.get("side") == "upper" and z <= 1:
                    diag[f"{where}.z"] = "lower tails need z < 1, upper tails need z > 1"
            if entry["check"] == "sparse_vector" and (not _is_int(entry.get("sparsity")) or entry["sparsity"] < 0):
                diag[f"{where}.sparsity"] = "required non-negative integer"
            if "sampler" in entry and entry["sampler"] not in ("full", "reduced"):
                diag[f"{where}.sampler"] = "must be 'full' or 'reduced'"
            consts = entry.get("constants", {})
            if not isinstance(consts, dict) or not all(_is_num(v) for v in consts.values()):
                diag[f"{where}.constants"] = "must map names to numbers"
            out.append(entry)
        return tuple(out)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except FileNotFoundError:
            raise ConfigError({"<file>": f"{path} does not exist"}) from None
        except yaml.YAMLError as exc:
            raise ConfigError({"<file>": f"{path} is not valid YAML: {exc}"}) from None
        return cls.from_dict(raw)

    # -- echo ---------------------------------------------------------------

    def to_dict(self):
        out = {
            "kind": self.kind,
            # unset dimensions are left out so kinds without dims re-validate
            "dims": {k: v for k, v in (("d", self.d), ("m", self.m), ("n", self.n), ("n_test", self.n_test)) if v},
            "seeds": {"base": self.seed_base, "count": self.seed_count},
            "data": {"separation": self.separation},
            "attack": self.attack.to_dict(),
            "attacks": [{"name": name, **spec.to_dict()} for name, spec in self.attacks],
            "probe": {"max_iter": self.probe_max_iter},
            "perceptron": {"max_epochs": self.perceptron_max_epochs},
            "perturbation": {"radius_w": self.radius_w, "radius_a": self.radius_a,
                             "source": self.perturbation_source},
            "large_eta": {"eta_exponent": self.eta_exponent},
            "criteria": dict(self.criteria),
            "output": {"dir": self.output_dir, "formats": list(self.formats), "save_noise": self.save_noise},
            "n_jobs": self.n_jobs,
        }
        if self.train is not None:
            t = self.train
            out["train"] = {"lr": t.lr, "steps": t.steps, "snapshot_every": t.snapshot_every,
                            "layers": t.layers, "temperature": t.temperature}
        if self.learning_rates:
            out["learning_rates"] = list(self.learning_rates)
        if self.theory_checks:
            out["theory"] = {"checks": [copy.deepcopy(c) for c in self.theory_checks]}
        if self.ingest:
            out["ingest"] = dict(self.ingest)
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)
