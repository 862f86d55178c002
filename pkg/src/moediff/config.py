"""Run configuration: flat ``key=value`` files with ``#`` comments.

Two built-in profiles: the toy profile keeps every experiment in the
minutes range on one core; the full profile is sized for real 12-lead
recordings (40 diffusion steps, width 160, 15 receptive field experts,
16 head experts, batch 6).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class RunConfig:
    # diffusion schedule
    steps: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.05
    # backbone dims
    width: int = 16  # feature channels per map (must be even)
    depth: int = 1
    rfa_kernels: tuple = (3, 5, 7, 9, 11)
    head_experts: int = 4
    d_emb: int = 64
    gate_mode: str = "unit"
    # data dims
    channels: int = 3
    t_len: int = 256
    # optimizer
    lr: float = 5e-3
    momentum: float = 0.9
    train_steps: int = 500
    batch: int = 8
    # masking
    mask_kind: str = "continuous"
    mask_ratio: float = 0.3
    drop_length: int = 26
    drop_channels: int = 1
    shared_window: bool = False
    # misc
    seed: int = 0
    data_path: str = ""
    out_dir: str = ""

    @property
    def rfa_experts(self) -> int:
        return len(self.rfa_kernels)

    def check(self) -> "RunConfig":
        if self.width % 2 != 0:
            raise ValueError(f"width must be even, got {self.width}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.data_path and self.out_dir and self.data_path == self.out_dir:
            raise ValueError("data_path and out_dir must be distinct paths")
        if self.gate_mode not in ("unit", "raw"):
            raise ValueError(f"gate_mode must be 'unit' or 'raw', got {self.gate_mode!r}")
        if self.mask_kind not in ("random", "continuous"):
            raise ValueError(f"mask_kind must be 'random' or 'continuous', got {self.mask_kind!r}")
        return self


def toy_profile() -> RunConfig:
    return RunConfig()


def full_profile() -> RunConfig:
    return RunConfig(
        steps=40,
        width=160,
        depth=3,
        rfa_kernels=tuple(range(3, 32, 2)),  # 15 experts
        head_experts=16,
        channels=12,
        t_len=1000,
        batch=6,
        train_steps=20000,
        drop_length=300,
    )


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        if raw.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if field.type in ("tuple", tuple):
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines; unknown keys and malformed lines are errors."""
    by_name = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in by_name:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(by_name[key], raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: key {key!r}: {exc}") from None
    return RunConfig(**values).check()


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(p) for p in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
