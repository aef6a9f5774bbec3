"""Experiment configuration documents (JSON, schema version 1).

Units are fixed by field-name suffix: ``_mhz`` (ordinary frequency), ``_us``,
``_ns``, ``_um``, ``_mw`` (milliwatt). Grids are either an explicit
list of numbers or ``{"start": a, "stop": b, "num": n}`` (inclusive linspace).
"""

from __future__ import annotations

import copy
import difflib
import json
import typing
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigSyntaxError, PhysicsError, SchemaError

SCHEMA_VERSION = 1


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LinGrid(_Model):
    start: float
    stop: float
    num: int


Grid = Union[list[float], LinGrid]


def grid_values(grid: Grid) -> np.ndarray:
    if isinstance(grid, LinGrid):
        return np.linspace(grid.start, grid.stop, grid.num)
    return np.asarray(grid, dtype=float)


class CouplingOverride(_Model):
    i: int
    j: int
    u_mhz: float


class AtomsConfig(_Model):
    positions_um: list[tuple[float, float, float]]
    c3_mhz_um3: float = 7456.0
    coupling_overrides: list[CouplingOverride] = []


class LevelsConfig(_Model):
    zero: bool = False
    ground: bool = False


class BeamConfig(_Model):
    power_mw: float
    waist_um: float = 3.4
    center_um: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    detuning_mhz: float = 1300.0
    omega_ref_mhz: float = 158.0
    power_ref_mw: float = 30.0


class MicrowaveConfig(_Model):
    """Global drive strength; each protocol sets or scans its own detuning."""

    rabi_mhz: float = 0.0


class ImperfectionsConfig(_Model):
    eta: float = 1.0
    scattering: Literal["off", "loss", "jumps"] = "off"
    raman: bool = False
    zeeman_split_mhz: float = 15.0
    zero_shift_mhz: float = 0.0
    tau_6p_ns: float = 121.0
    light_shift_mode: Literal["perturbative", "dressed"] = "perturbative"
    scattered_outcome: Literal["recaptured", "lost"] = "recaptured"
    readout_flip: float = 0.0
    rise_time_us: float = 0.0
    jump_dt_us: float = 0.002


class WindowConfig(_Model):
    """Either an explicit ``start_us``/``duration_us`` window or a target
    ``phase_pi`` (imprinted phase in units of pi, window calibrated)."""

    start_us: Optional[float] = None
    duration_us: Optional[float] = None
    phase_pi: Optional[float] = None

    @model_validator(mode="after")
    def _one_form(self):
        explicit = self.start_us is not None and self.duration_us is not None
        partial = (self.start_us is None) != (self.duration_us is None)
        if partial or explicit == (self.phase_pi is not None):
            raise ValueError("give either start_us and duration_us, or phase_pi")
        return self


class TraceConfig(_Model):
    label: str
    freeze_windows: list[WindowConfig] = []


class PreparationConfig(_Model):
    shift_mhz: float = 4.8
    rabi_mhz: float = 1.3
    ideal: bool = False


class LightshiftParams(_Model):
    name: Literal["lightshift_spectroscopy"]
    addr_detunings_mhz: Grid
    mw_detunings_mhz: Grid
    pulse_us: float
    shift_mode: Literal["dressed", "perturbative"] = "dressed"


class SpectroscopyMapParams(_Model):
    name: Literal["spectroscopy_map"]
    shifts_mhz: Grid
    mw_detunings_mhz: Grid
    pulse_us: Optional[float] = None


class RabiPairParams(_Model):
    name: Literal["rabi_pair"]
    durations_us: Grid
    pair_detuning_mhz: Optional[float] = None
    single_detuning_mhz: float = 0.0


class ExchangeParams(_Model):
    name: Literal["exchange"]
    times_us: Grid
    preparation: PreparationConfig = PreparationConfig()
    freeze_shift_mhz: float = 4.8
    traces: list[TraceConfig] = [TraceConfig(label="free")]


class RamanParams(_Model):
    name: Literal["raman_leakage"]
    t_max_us: float
    preparation: PreparationConfig = PreparationConfig()
    freeze_shift_mhz: float = 4.8
    sequences: list[TraceConfig] = [TraceConfig(label="free")]
    step_us: float = 0.002


ProtocolParams = Annotated[
    Union[LightshiftParams, SpectroscopyMapParams, RabiPairParams, ExchangeParams, RamanParams],
    Field(discriminator="name"),
]


class OutputConfig(_Model):
    dir: str = "out"


class ExperimentConfig(_Model):
    schema_: Literal[1] = Field(alias="schema")
    protocol: ProtocolParams
    atoms: AtomsConfig
    levels: LevelsConfig = LevelsConfig()
    beams: list[BeamConfig] = []
    microwave: MicrowaveConfig = MicrowaveConfig()
    imperfections: ImperfectionsConfig = ImperfectionsConfig()
    shots: int = 0
    seed: int = 0
    output: OutputConfig = OutputConfig()

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------------------------------------------------------------- parsing


def _field_names(model: type[BaseModel]) -> list[str]:
    return [f.alias or name for name, f in model.model_fields.items()]


def _models_in(annotation) -> list[type[BaseModel]]:
    """BaseModel classes reachable from a type annotation."""
    out = []
    stack = [annotation]
    while stack:
        a = stack.pop()
        if isinstance(a, type) and issubclass(a, BaseModel):
            out.append(a)
            continue
        stack.extend(typing.get_args(a))
    return out


def _owner_model(loc: tuple) -> type[BaseModel] | None:
    """Model whose fields contain the (extra) key at the end of ``loc``."""
    candidates: list[type[BaseModel]] = [ExperimentConfig]
    for part in loc[:-1]:
        nxt = []
        for model in candidates:
            if isinstance(part, int):
                nxt.append(model)
                continue
            fields = {f.alias or n: f for n, f in model.model_fields.items()}
            if part in fields:
                nxt.extend(_models_in(fields[part].annotation))
        # discriminated unions put the tag into loc
        tagged = [m for m in candidates
                  if "name" in m.model_fields and part in typing.get_args(m.model_fields["name"].annotation)]
        candidates = tagged or nxt
        if not candidates:
            return None
    return candidates[0] if len(candidates) == 1 else None


def _all_field_names() -> set[str]:
    seen, names = set(), set()
    stack = [ExperimentConfig]
    while stack:
        m = stack.pop()
        if m in seen:
            continue
        seen.add(m)
        names.update(_field_names(m))
        for f in m.model_fields.values():
            stack.extend(_models_in(f.annotation))
    return names


def _loc_str(loc) -> str:
    return ".".join(str(x) for x in loc)


def _describe(err: dict) -> str:
    loc = tuple(err["loc"])
    path = _loc_str(loc)
    if err["type"] == "extra_forbidden":
        key = str(loc[-1])
        owner = _owner_model(loc)
        vocab = _field_names(owner) if owner else sorted(_all_field_names())
        close = difflib.get_close_matches(key, vocab, n=1, cutoff=0.0)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        return f"{path}: unknown key{hint}"
    return f"{path}: {err['msg']}"


def _drop(data: Any, loc: tuple):
    node = data
    for part in loc[:-1]:
        try:
            node = node[part]
        except (KeyError, IndexError, TypeError):
            return
    if isinstance(node, dict):
        node.pop(loc[-1], None)


def _strip_tags(loc: tuple, data: Any) -> tuple:
    """Remove discriminator tags that pydantic inserts into error locations."""
    out, node = [], data
    for part in loc:
        if isinstance(node, dict) and part not in node and isinstance(part, str):
            continue
        out.append(part)
        try:
            node = node[part]
        except (KeyError, IndexError, TypeError):
            node = None
    return tuple(out)


def validate(data: Any, strict: bool = True) -> ExperimentConfig:
    """Validate an already-decoded document."""
    if not isinstance(data, dict):
        raise SchemaError("top level must be a JSON object", [": expected object"])
    if "schema" not in data:
        raise SchemaError("missing required 'schema' field", ["schema: field required"])
    if not strict:
        data = copy.deepcopy(data)
    for _ in range(100):
        try:
            config = ExperimentConfig.model_validate(data)
            break
        except ValidationError as exc:
            errors = exc.errors()
            extra = [e for e in errors if e["type"] == "extra_forbidden"]
            if not strict and extra and len(extra) == len(errors):
                for e in extra:
                    _drop(data, _strip_tags(tuple(e["loc"]), data))
                continue
            problems = [_describe(e) for e in errors]
            raise SchemaError("schema violation: " + "; ".join(problems), problems) from None
    else:
        raise SchemaError("could not strip unknown keys")
    check_physics(config)
    return config


def parse(document: str | bytes, strict: bool = True) -> ExperimentConfig:
    """Parse and fully validate a UTF-8 JSON configuration document."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"document is not UTF-8: {exc}") from None
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                                exc.lineno, exc.colno) from None
    return validate(data, strict=strict)


def echo(config: ExperimentConfig) -> str:
    """Canonical document: sorted keys, two-space indent, shortest round-trip floats."""
    data = config.model_dump(mode="json", by_alias=True)
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def to_dict(config: ExperimentConfig) -> dict:
    return json.loads(echo(config))


def apply_overrides(data: dict, assignments: list[str]) -> dict:
    """Apply ``dotted.path=value`` assignments to a raw document (in place).

    Values are decoded as JSON when possible, otherwise kept as strings.
    List elements are addressed by integer path components.
    """
    for item in assignments:
        if "=" not in item:
            raise SchemaError(f"override {item!r} must look like key=value", [item])
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = path.strip().split(".")
        node = data
        for k, part in enumerate(parts):
            last = k == len(parts) - 1
            key: Any = int(part) if isinstance(node, list) and part.lstrip("-").isdigit() else part
            if last:
                if isinstance(node, list):
                    node[key] = value
                else:
                    node[key] = value
                break
            if isinstance(node, dict):
                node = node.setdefault(key, {})
            else:
                try:
                    node = node[key]
                except (IndexError, TypeError):
                    raise SchemaError(f"override path {path!r} does not exist", [path]) from None
    return data


# ---------------------------------------------------------------- physics checks


def _need(cond: bool, message: str, field: str):
    if not cond:
        raise PhysicsError(f"{field}: {message}", field)


def check_physics(config: ExperimentConfig) -> None:
    """Range and consistency checks beyond the type schema."""
    imp = config.imperfections
    _need(0.0 <= imp.eta <= 1.0, f"eta must lie in [0, 1], got {imp.eta}", "imperfections.eta")
    _need(0.0 <= imp.readout_flip <= 1.0, "must lie in [0, 1]", "imperfections.readout_flip")
    _need(imp.tau_6p_ns > 0, "must be positive", "imperfections.tau_6p_ns")
    _need(imp.rise_time_us >= 0, "must be non-negative", "imperfections.rise_time_us")
    _need(imp.jump_dt_us > 0, "must be positive", "imperfections.jump_dt_us")
    _need(config.shots >= 0, "must be non-negative", "shots")
    _need(config.seed >= 0, "must be non-negative", "seed")

    pos = np.asarray(config.atoms.positions_um, dtype=float).reshape(-1, 3)
    n = pos.shape[0]
    _need(n >= 1, "need at least one atom", "atoms.positions_um")
    _need(bool(np.all(np.isfinite(pos))), "positions must be finite", "atoms.positions_um")
    for i in range(n):
        for j in range(i + 1, n):
            _need(np.linalg.norm(pos[i] - pos[j]) > 0, f"atoms {i} and {j} are coincident", "atoms.positions_um")
    for k, o in enumerate(config.atoms.coupling_overrides):
        _need(o.i != o.j and 0 <= o.i < n and 0 <= o.j < n, "invalid atom pair", f"atoms.coupling_overrides.{k}")

    _need(len(config.beams) <= 1, "protocols switch a single addressing beam", "beams")
    for k, b in enumerate(config.beams):
        _need(b.waist_um > 0, "must be positive", f"beams.{k}.waist_um")
        _need(b.power_mw >= 0, "must be non-negative", f"beams.{k}.power_mw")
        _need(b.detuning_mhz != 0, "must be non-zero", f"beams.{k}.detuning_mhz")
        _need(any(b.axis), "must be a non-zero vector", f"beams.{k}.axis")

    p = config.protocol
    for name in type(p).model_fields:
        value = getattr(p, name)
        if isinstance(value, LinGrid):
            _need(value.num >= 1, "grid needs num >= 1", f"protocol.{name}.num")
        if isinstance(value, LinGrid) or (isinstance(value, list) and all(isinstance(v, float) for v in value)):
            _need(bool(np.all(np.isfinite(grid_values(value)))), "grid values must be finite", f"protocol.{name}")

    if p.name in ("rabi_pair", "exchange", "raman_leakage"):
        _need(n == 2, f"{p.name} needs exactly two atoms", "atoms.positions_um")
    if p.name == "lightshift_spectroscopy":
        _need(n == 1, "lightshift_spectroscopy simulates a single atom", "atoms.positions_um")
        _need(p.pulse_us > 0, "must be positive", "protocol.pulse_us")
        _need(config.microwave.rabi_mhz > 0, "needs a microwave drive", "microwave.rabi_mhz")
        _need(len(config.beams) == 1, "needs one addressing beam", "beams")
        _need(bool(np.all(grid_values(p.addr_detunings_mhz) != 0)), "detunings must be non-zero",
              "protocol.addr_detunings_mhz")
    if p.name == "spectroscopy_map":
        _need(config.microwave.rabi_mhz > 0 or p.pulse_us is not None, "needs a microwave drive or pulse_us",
              "microwave.rabi_mhz")
        _need(p.pulse_us is None or p.pulse_us >= 0, "must be non-negative", "protocol.pulse_us")
    if p.name == "rabi_pair":
        d = grid_values(p.durations_us)
        _need(bool(np.all(d >= 0)) and bool(np.all(np.diff(d) >= 0)), "must be non-negative and sorted",
              "protocol.durations_us")
    if p.name in ("exchange", "raman_leakage"):
        _need(p.preparation.ideal or p.preparation.rabi_mhz > 0, "must be positive", "protocol.preparation.rabi_mhz")
        traces = p.traces if p.name == "exchange" else p.sequences
        key = "traces" if p.name == "exchange" else "sequences"
        if p.name == "exchange":
            t = grid_values(p.times_us)
            _need(bool(np.all(t >= 0)) and bool(np.all(np.diff(t) >= 0)), "must be non-negative and sorted",
                  "protocol.times_us")
            t_max = float(t.max()) if t.size else 0.0
        else:
            _need(p.t_max_us > 0, "must be positive", "protocol.t_max_us")
            _need(p.step_us > 0, "must be positive", "protocol.step_us")
            t_max = p.t_max_us
        labels = [tr.label for tr in traces]
        _need(len(set(labels)) == len(labels), "trace labels must be unique", f"protocol.{key}")
        for k, tr in enumerate(traces):
            spans = []
            for m, w in enumerate(tr.freeze_windows):
                field = f"protocol.{key}.{k}.freeze_windows.{m}"
                if w.phase_pi is not None:
                    _need(p.freeze_shift_mhz != 0, "phase windows need a freeze shift", "protocol.freeze_shift_mhz")
                    continue
                _need(w.start_us >= 0 and w.duration_us >= 0, "start and duration must be non-negative", field)
                _need(w.start_us + w.duration_us <= t_max + 1e-12, "window extends past the last record time", field)
                spans.append((w.start_us, w.start_us + w.duration_us, field))
            spans.sort()
            for (a0, a1, _), (b0, _, fb) in zip(spans, spans[1:]):
                _need(b0 >= a1 - 1e-12, "freeze windows overlap", fb)
