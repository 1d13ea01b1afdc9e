"""Flat ``key = value`` run configuration.

One entry per line, ``#`` starts a comment.  Command-line ``--set key=value``
overrides win over file values; unknown keys are rejected.  Empty values
mean "derive the default" (e.g. the schedule follows the architecture).
"""

from dataclasses import replace
from pathlib import Path

from .data import ChannelMeans
from .models import ModelSpec
from .training import TrainConfig, schedule_for


class ConfigError(Exception):
    pass


# key: (default, help); "" means derived or unset
KEYS = {
    "name": ("run", "run name; outputs go to <runs_dir>/<name>"),
    "runs_dir": ("runs", "parent directory of run directories"),
    "arch": ("edsr", "edsr | selfonn | hybrid"),
    "blocks": ("", "residual block count (edsr/hybrid 16, selfonn 8)"),
    "channels": ("64", "feature channels"),
    "q": ("3", "Taylor order of self-organized layers"),
    "scale": ("2", "upscaling factor, 2 or 4"),
    "num_sor": ("", "hybrid: number of SOR blocks (default 4)"),
    "sor_position": ("last", "hybrid: first | last"),
    "upsampler": ("", "hybrid: conv | sol (default sol)"),
    "seed": ("0", "seed for initialization and batch sampling"),
    "iters": ("300000", "total training iterations"),
    "schedule": ("", "edsr | selfonn (default follows arch)"),
    "lr": ("", "initial learning rate (default from schedule)"),
    "batch": ("16", "patches per iteration"),
    "patch": ("48", "LR patch side"),
    "train_data": ("", "dataset root with HR/ and LRx<scale>/"),
    "val_data": ("", "evaluation dataset root"),
    "checkpoint_interval": ("10000", "iterations between checkpoints"),
    "init_checkpoint": ("", "initialize from this checkpoint (fine-tuning)"),
    "skip": ("", "comma-separated name prefixes left freshly initialized"),
    "resume": ("", "resume training from this checkpoint"),
    "mean_r": ("", "channel means; computed from train_data when unset"),
    "mean_g": ("", ""),
    "mean_b": ("", ""),
    "threads": ("", "worker cap for the compiled kernels"),
    "crop": ("", "evaluation border crop (default: scale)"),
}

MODEL_KEYS = ("arch", "blocks", "channels", "q", "scale", "num_sor", "sor_position", "upsampler")


def parse_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


class RunConfig:
    def __init__(self, values=None):
        self.values = {}
        self.explicit = set()
        self.update(values or {})

    @classmethod
    def load(cls, path=None, overrides=()):
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            cfg.update(parse_text(text, str(path)))
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            cfg.update({key.strip(): value.strip()})
        return cfg

    def update(self, values):
        for key, value in values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            self.values[key] = str(value)
            self.explicit.add(key)

    def raw(self, key):
        return self.values.get(key, KEYS[key][0])

    def get_str(self, key):
        value = self.raw(key)
        return value or None

    def get_int(self, key, default=None):
        value = self.raw(key)
        if value == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None

    def get_float(self, key, default=None):
        value = self.raw(key)
        if value == "":
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None

    # ------------------------------------------------------------ typed views

    def model_spec(self):
        arch = self.raw("arch")
        blocks = self.get_int("blocks")
        channels, q, scale = self.get_int("channels"), self.get_int("q"), self.get_int("scale")
        try:
            if arch == "edsr":
                spec = ModelSpec.edsr(16 if blocks is None else blocks, channels, scale)
                spec = replace(spec, q=q)  # unused by conv layers, kept for the record
            elif arch == "selfonn":
                spec = ModelSpec.selfonn(8 if blocks is None else blocks, channels, q, scale)
            elif arch == "hybrid":
                spec = ModelSpec.hybrid(16 if blocks is None else blocks, channels, q, scale,
                                        self.get_int("num_sor", 4), self.raw("sor_position"),
                                        self.get_str("upsampler") or "sol")
            else:
                raise ConfigError(f"arch: expected edsr, selfonn or hybrid, got {arch!r}")
            if arch != "hybrid":
                self._check_derived(spec)
            return spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def _check_derived(self, spec):
        # num_sor / upsampler are fixed by edsr and selfonn; explicit values must agree
        num_sor = self.get_int("num_sor")
        if num_sor is not None and num_sor != spec.num_sor:
            raise ConfigError(f"num_sor={num_sor} is not allowed for arch {spec.arch} "
                              f"(fixed at {spec.num_sor})")
        up = self.get_str("upsampler")
        if up is not None and up != spec.upsampler_kind:
            raise ConfigError(f"upsampler={up} is not allowed for arch {spec.arch} "
                              f"(fixed at {spec.upsampler_kind})")

    def means(self):
        vals = [self.get_float(k) for k in ("mean_r", "mean_g", "mean_b")]
        if all(v is None for v in vals):
            return None
        if any(v is None for v in vals):
            raise ConfigError("mean_r, mean_g and mean_b must be given together")
        try:
            return ChannelMeans(*vals)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def set_means(self, means):
        self.values.update(mean_r=repr(means.r), mean_g=repr(means.g), mean_b=repr(means.b))

    def skip_prefixes(self):
        return tuple(s.strip() for s in self.raw("skip").split(",") if s.strip())

    def run_dir(self):
        return Path(self.raw("runs_dir")) / self.raw("name")

    def train_config(self):
        spec = self.model_spec()
        train_data = self.get_str("train_data")
        if train_data is None:
            raise ConfigError("train_data is required for training")
        cfg = TrainConfig(
            spec=spec,
            train_data=train_data,
            run_dir=str(self.run_dir()),
            seed=self.get_int("seed"),
            total_iters=self.get_int("iters"),
            schedule=self.get_str("schedule") or schedule_for(spec.arch),
            lr=self.get_float("lr"),
            batch=self.get_int("batch"),
            patch=self.get_int("patch"),
            checkpoint_interval=self.get_int("checkpoint_interval"),
            init_checkpoint=self.get_str("init_checkpoint"),
            skip=self.skip_prefixes(),
            resume=self.get_str("resume"),
            means=self.means(),
        )
        try:
            return cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved(self):
        """Every key with its effective value, derived defaults filled in."""
        out = {k: self.raw(k) for k in KEYS}
        spec = self.model_spec()
        out.update(arch=spec.arch, blocks=str(spec.num_blocks), num_sor=str(spec.num_sor),
                   upsampler=spec.upsampler_kind, sor_position=spec.sor_position,
                   schedule=out["schedule"] or schedule_for(spec.arch))
        if not out["crop"]:
            out["crop"] = str(spec.scale)
        return out

    def resolved_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.resolved().items())

    def write_resolved(self, run_dir=None):
        run_dir = Path(run_dir) if run_dir is not None else self.run_dir()
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "config.resolved"
        path.write_text(self.resolved_text())
        return path
