"""Architecture accounting: parameters, FLOPs, receptive field.

Counts derive from the same layer enumeration that defines the forward
pass (:func:`sciwb.srn.layer_plan`). Convolutions cost
C_out*C_in*k*k*H_out*W_out multiply-accumulates (1 MAC = 1 FLOP);
elementwise work, pooling and pixel shuffles cost one op per output
element. The receptive field follows the deepest serial conv path with
the recurrence rf += (k - 1) * jump, jump *= stride, where a pixel
shuffle contributes a fractional stride 1/r.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

from .exceptions import ContractError
from .srn import LayerSpec, SrnConfig, layer_plan


@dataclass(frozen=True)
class ArchProfile:
    """Aggregate counts plus the per-layer breakdown they came from."""

    label: str
    params: int
    flops: int
    receptive_field: int
    height: int
    width: int
    rows: tuple[LayerSpec, ...]

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_g(self) -> float:
        return self.flops / 1e9


def count_params(config: SrnConfig) -> int:
    """Trainable parameter total; independent of the input size."""
    s = config.rescale_scale
    probe = 4 * s * s
    return sum(row.params for row in layer_plan(config, probe, probe))


def count_flops(config: SrnConfig, height: int, width: int) -> int:
    """Forward-pass FLOPs (= MACs) for one (height, width) input."""
    return sum(row.flops for row in layer_plan(config, height, width))


def receptive_field(config: SrnConfig) -> int:
    """Receptive-field side length along the deepest serial conv path."""
    s = config.rescale_scale
    probe = 4 * s * s
    rf = Fraction(1)
    jump = Fraction(1)
    for row in layer_plan(config, probe, probe):
        if not row.on_path:
            continue
        rf += (row.k - 1) * jump
        jump *= row.stride
    if rf.denominator != 1:
        raise ContractError(f"receptive field came out fractional: {rf}")
    return int(rf)


def build_profile(config: SrnConfig, height: int, width: int,
                  label: str | None = None) -> ArchProfile:
    rows = tuple(layer_plan(config, height, width))
    if label is None:
        label = ("cae-srn-" if config.use_cae else "srn-") + config.variant
    return ArchProfile(
        label=label,
        params=sum(r.params for r in rows),
        flops=sum(r.flops for r in rows),
        receptive_field=receptive_field(config),
        height=height,
        width=width,
        rows=rows,
    )


def standard_variant_profiles(in_channels: int = 28, height: int = 256,
                              width: int = 256) -> list[ArchProfile]:
    """The six reference rows: plain and attention backbones, v1 to v3."""
    base = SrnConfig(in_channels=in_channels)
    profiles = []
    for use_cae in (False, True):
        for variant in ("v1", "v2", "v3"):
            cfg = replace(base, use_cae=use_cae, variant=variant)
            profiles.append(build_profile(cfg, height, width))
    return profiles


def profile_table(profiles: list[ArchProfile]) -> tuple[list[str], list[list]]:
    """Header and rows for the human-readable / CSV summary."""
    header = ["model", "params", "params_m", "flops", "flops_g", "receptive_field"]
    rows = [[p.label, p.params, round(p.params_m, 4), p.flops,
             round(p.flops_g, 4), p.receptive_field] for p in profiles]
    return header, rows


def breakdown_rows(profile: ArchProfile) -> tuple[list[str], list[list]]:
    header = ["model", "layer", "kind", "c_in", "c_out", "k", "stride",
              "h_out", "w_out", "params", "flops"]
    rows = [[profile.label, r.name, r.kind, r.c_in, r.c_out, r.k, str(r.stride),
             r.h_out, r.w_out, r.params, r.flops] for r in profile.rows]
    return header, rows
