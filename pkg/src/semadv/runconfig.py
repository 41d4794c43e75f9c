"""Run configuration: a flat TOML file with one section per subsystem.

Every key has a default; unknown sections or keys are rejected so typos fail
loudly.  ``serialize`` emits a canonical rendering (schema order, full key
set), making parse -> serialize -> parse a fixed point.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .augment import TransformFamily
from .classifiers import PgdSettings, TrainConfig
from .ebm import EbmTrainConfig
from .pipeline import AttackConfig


class ConfigError(ValueError):
    pass


SCHEMA: dict[str, dict[str, object]] = {
    "data": {
        "images": "builtin:digits",
        "labels": "",
        "test_fraction": 0.2,
        "split_seed": 0,
    },
    "victim": {
        "learning_rate": 1e-4,
        "batch_size": 64,
        "epochs": 14,
        "seed": 0,
        "subset": 0,           # 0 = full training split
        "adv_eps": 0.0,        # > 0 turns on adversarial training
        "adv_alpha": 0.036,
        "adv_steps": 10,
        "adv_norm": "linf",
        "adv_warmup_frac": 0.0,
    },
    "aux": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 3,
        "seed": 11,
        "subset": 0,
        "augment_copies": 1,   # extra transformed copies of each training image
    },
    "surrogate": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "epochs": 3,
        "seed": 23,
        "subset": 0,
        "augment_copies": 1,
    },
    "family": {
        "kinds": "scale,rotate,crop,tps",
        "tps_sigma": 2.0,
        "scale_lo": 0.85,
        "scale_hi": 1.15,
        "rotate_degrees": 15.0,
        "crop_px": 2,
        "brightness_delta": 0.2,
        "hue_delta": 0.1,
    },
    "ebm": {
        "steps": 700,
        "batch_size": 16,
        "lmc_steps": 30,
        "lmc_step_size": 0.1,
        "learning_rate": 1e-4,
        "alpha_reg": 0.1,
        "buffer_capacity": 10000,
        "reinit_prob": 0.05,
        "clip_norm": 100.0,
        "seed": 0,
    },
    "attack": {
        "m_samples": 2000,
        "n_final": 100,
        "kappa": 0.10,
        "c1": 1.0,
        "c2": 0.01,
        "distance": "semantic",
        "objective": "cw",
        "c_pe": 1.0,
        "c_je": 1.0,
        "step_size": 0.05,
        "n_steps": 200,
        "seed": 0,
        "chunk": 250,
    },
    "pgd": {
        "norm": "linf",
        "eps": 0.3,
        "alpha": 0.04,
        "steps": 100,
    },
    "grid": {
        "sources_seed": 0,
        "targets": "all",
    },
}


def default_config() -> dict:
    return {s: dict(keys) for s, keys in SCHEMA.items()}


def parse(text: str) -> dict:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from e
    cfg = default_config()
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key '{section}' must be a section")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            default = SCHEMA[section][key]
            if isinstance(default, bool):
                ok = isinstance(value, bool)
            elif isinstance(default, int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                value = float(value)
            else:
                ok = isinstance(value, str)
            if not ok:
                raise ConfigError(
                    f"key '{key}' in [{section}] expects {type(default).__name__}, "
                    f"got {type(value).__name__}")
            cfg[section][key] = value
    return cfg


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize(cfg: dict) -> str:
    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {_render(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def load(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def save(path, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))


# -- typed views -----------------------------------------------------------------


def family_from(cfg: dict) -> TransformFamily:
    f = cfg["family"]
    kinds = tuple(k.strip() for k in f["kinds"].split(",") if k.strip())
    return TransformFamily(kinds=kinds, tps_sigma=f["tps_sigma"],
                           scale_range=(f["scale_lo"], f["scale_hi"]),
                           rotate_degrees=f["rotate_degrees"], crop_px=f["crop_px"],
                           brightness_delta=f["brightness_delta"], hue_delta=f["hue_delta"])


def train_config_from(cfg: dict, section: str, seed_override=None) -> TrainConfig:
    s = cfg[section]
    return TrainConfig(learning_rate=s["learning_rate"], batch_size=s["batch_size"],
                       epochs=s["epochs"],
                       seed=s["seed"] if seed_override is None else seed_override)


def pgd_from(cfg: dict, section: str = "pgd") -> PgdSettings:
    s = cfg[section]
    if section == "victim":
        return PgdSettings(eps=s["adv_eps"], alpha=s["adv_alpha"], steps=s["adv_steps"],
                           norm=s["adv_norm"], warmup_frac=s["adv_warmup_frac"])
    return PgdSettings(eps=s["eps"], alpha=s["alpha"], steps=s["steps"], norm=s["norm"])


def ebm_config_from(cfg: dict, seed_override=None) -> EbmTrainConfig:
    s = cfg["ebm"]
    return EbmTrainConfig(steps=s["steps"], batch_size=s["batch_size"],
                          lmc_steps=s["lmc_steps"], lmc_step_size=s["lmc_step_size"],
                          learning_rate=s["learning_rate"], alpha_reg=s["alpha_reg"],
                          buffer_capacity=s["buffer_capacity"], reinit_prob=s["reinit_prob"],
                          clip_norm=s["clip_norm"],
                          seed=s["seed"] if seed_override is None else seed_override)


def attack_config_from(cfg: dict, seed_override=None, n_threads: int = 1) -> AttackConfig:
    s = cfg["attack"]
    return AttackConfig(m_samples=s["m_samples"], n_final=s["n_final"], kappa=s["kappa"],
                        c1=s["c1"], c2=s["c2"], distance=s["distance"],
                        objective=s["objective"], c_pe=s["c_pe"], c_je=s["c_je"],
                        step_size=s["step_size"], n_steps=s["n_steps"],
                        seed=s["seed"] if seed_override is None else seed_override,
                        chunk=s["chunk"], n_threads=n_threads)
