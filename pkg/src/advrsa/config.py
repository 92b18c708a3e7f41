"""Run configuration: flat key=value files, strict key validation, and a
content hash that identifies analysis-relevant settings.

Every pipeline command resolves its configuration to the full set of keys
(defaults included), writes that resolved file beside its outputs, and stamps
the config hash into every artifact so downstream commands can refuse
mismatched inputs. ``out_dir`` and ``threads`` never affect results, so they
are excluded from the hash.
"""

import hashlib
from dataclasses import dataclass


def _format_value(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (parser, default, help)
SCHEMA = {
    # master seed; stage streams derive from it (see stage_seed)
    "seed": (int, 0, "master seed; every stage derives its own stream"),
    # dataset
    "classes": (int, 8, "number of shape classes"),
    "train_per_class": (int, 200, "training images per class"),
    "val_per_class": (int, 150, "validation images per class"),
    # training
    "epochs": (int, 12, "SGD epochs"),
    "learning_rate": (float, 0.05, "SGD learning rate"),
    "batch_size": (int, 32, "SGD minibatch size"),
    "momentum": (float, 0.9, "SGD momentum"),
    # RE stimulus selection
    "re_k": (int, 40, "number of regular stimuli"),
    "re_threshold": (float, 0.99, "minimum correct-class confidence"),
    "re_strategy": (str, "band",
                    "qualifying-image preference: band | least_confident | "
                    "first"),
    "re_band_upper": (float, 0.999,
                      "band strategy: prefer confidences at or below this"),
    # AN synthesis
    "an_lambda": (float, 0.05, "AN regularization weight"),
    "an_step": (float, 2.0, "AN ascent step size (largest/initial)"),
    "an_threshold": (float, 0.99, "AN minimum target confidence"),
    "an_match_thresholds": (_parse_bool, True,
                            "stop each AN at its paired regular stimulus's "
                            "confidence instead of a uniform threshold"),
    "an_threshold_cap": (float, 0.9995,
                         "matched thresholds are clamped to this ceiling"),
    "an_overshoot_cap": (float, 1e-4,
                         "land within this distance above the threshold "
                         "(0 disables the precision stop)"),
    "an_dither": (str, "both",
                  "per-stimulus synthesis-hyperparameter dithering: "
                  "none | step | lambda | both"),
    "an_max_iters": (int, 5000, "AN iteration cap"),
    "an_retry_factor": (float, 0.45,
                        "multiply lambda by this and retry when a synthesis "
                        "fails to converge"),
    "an_max_retries": (int, 3, "maximum lambda-shrink retries per AN image"),
    # AI synthesis
    "ai_lambda": (float, 0.05, "AI regularization weight"),
    "ai_step": (float, 0.01, "AI ascent step size"),
    "ai_threshold": (float, 0.99, "AI target confidence"),
    "ai_max_iters": (int, 5000, "AI iteration cap"),
    "ai_target_scheme": (str, "confusable",
                         "target assignment: confusable | balanced_random"),
    # statistics
    "n_perm": (int, 1000, "permutation-null draws"),
    "n_boot": (int, 1000, "bootstrap draws"),
    # encoding
    "encode_s_max": (int, 20, "ROMP sparsity cap"),
    "standardize_features": (_parse_bool, True, "z-score design columns"),
    "sim_n_voxels": (int, 24, "simulated response channels"),
    "sim_source_layer": (str, "spread",
                         "layer driving the simulated channels, or 'spread' "
                         "to rotate channels across the report layers"),
    "sim_s": (int, 5, "planted support size per simulated channel"),
    "sim_noise_sd": (float, 0.1, "simulated noise sd (fraction of signal sd)"),
    # searchlight
    "sl_grid_nx": (int, 16, "simulated sheet width (vertices per hemisphere)"),
    "sl_grid_ny": (int, 8, "simulated sheet height"),
    "sl_spacing": (float, 1.5, "vertex spacing, mm"),
    "sl_radius": (float, 3.0, "searchlight disk radius, mm"),
    "sl_top_n": (int, 40, "vertices kept by split-half selection"),
    # execution (excluded from the config hash)
    "out_dir": (str, "runs/default", "output directory"),
}

HASH_EXEMPT = ("out_dir",)

# stage codes for deriving independent named streams from the master seed
STAGE_CODES = {
    "data": 1, "network": 2, "targets": 3, "stats": 4,
    "simulate": 5, "an": 6, "ai": 7, "geometry": 8,
}


def stage_seed(master, stage):
    """A per-stage seed derived from the master seed.

    The stride keeps streams for nearby master seeds disjoint across stages.
    """
    return int(master) * 1024 + STAGE_CODES[stage]


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key)

    def replaced(self, **overrides):
        bad = [k for k in overrides if k not in SCHEMA]
        if bad:
            raise ValueError(f"unknown config keys: {', '.join(sorted(bad))}")
        merged = dict(self.values)
        for key, value in overrides.items():
            parser = SCHEMA[key][0]
            merged[key] = parser(value) if isinstance(value, str) else value
        return RunConfig(values=merged)

    def resolved_text(self):
        lines = [f"{key}={_format_value(self.values[key])}" for key in SCHEMA]
        return "\n".join(lines) + "\n"

    def config_hash(self):
        lines = [f"{key}={_format_value(self.values[key])}"
                 for key in SCHEMA if key not in HASH_EXEMPT]
        payload = "\n".join(lines).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def stage_seed(self, stage):
        return stage_seed(self.values["seed"], stage)


def default_config():
    return RunConfig(values={key: default for key, (_, default, _) in SCHEMA.items()})


def parse_config_text(text, source="<config>"):
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            known = ", ".join(SCHEMA)
            raise ValueError(f"{source}:{lineno}: unknown key {key!r} "
                             f"(known keys: {known})")
        if key in seen:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key!r}: {exc}")
    return RunConfig(values=values)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def write_resolved(path, cfg):
    """Write the fully-resolved config (defaults included) next to outputs."""
    from . import __version__
    text = (f"# resolved configuration (all keys)\n"
            f"# config_hash={cfg.config_hash()}\n"
            f"# version={__version__}\n" + cfg.resolved_text())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
