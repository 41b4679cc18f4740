"""YAML run configuration.

A run file has four blocks::

    structure:
      inclusions:                 # fixed inclusions, may be empty
        - {shape: disk, cx: 0.5, cz: 0.0, r: 0.3, eps: 2.0}
        - {shape: rectangle, x0: 0.2, x1: 0.8, z0: -0.1, z1: 0.1, eps: 3.0}
      coupling:                   # optional double array
        upper: [{shape: disk, cx: 0.5, cz: 0.0, r: 0.25, eps: 2.0}]
        lower: [{shape: disk, cx: 0.5, cz: 0.0, r: 0.25, eps: 2.0}]
        h_range: [0.3, 3.0]
      h: 0.5
      h_scan: {start: 0.5, stop: 0.4, step: 0.01}
    physics:
      kx: 0.0
      region: [30.0, 38.0, -3.0, -0.001]   # re_min, re_max, im_min, im_max
      target: [35.26, -0.165]              # pole guess; skips the scan
      k_grid: {start: 5.3, stop: 5.9, num: 40}
      mode_grid: {x: [0.0, 1.0, 21], z: [-1.0, 1.0, 41]}
      packet: {k_c: null, sigma: null, c: 1.0, t_stop: null, num: 64}
      bic_deltas: {min: 2.0e-4, max: 1.5e-2, num: 8}
    numerics:
      order: 10
      M: null
      scan_grid: [24, 12]
      tol: 1.0e-10
      sv_threshold: 0.25
      exclusion: 1.0e-4
      min_step: 1.0e-6
      threads: 1
    output:
      directory: results
      formats: [csv, json]

Every key except ``structure`` is optional.  :func:`parse_config` fills in
defaults and raises :class:`~siegert.errors.SchemaError` naming the dotted
path of the first offending key.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import yaml

from .errors import SchemaError
from .structures import Disk, DoubleArray, Inclusion, Rectangle, StructureSpec

_DISK_KEYS = ("cx", "cz", "r", "eps")
_RECT_KEYS = ("x0", "x1", "z0", "z1", "eps")

DEFAULTS = {
    "structure": {"inclusions": [], "coupling": None, "h": None, "h_scan": None},
    "physics": {
        "kx": 0.0, "region": None, "target": None, "k_grid": None, "mode_grid": None,
        "packet": {"k_c": None, "sigma": None, "c": 1.0, "t_stop": None, "num": 64},
        "bic_deltas": {"min": 2.0e-4, "max": 1.5e-2, "num": 8},
    },
    "numerics": {
        "order": 10, "M": None, "scan_grid": [24, 12], "tol": 1.0e-10, "sv_threshold": 0.25,
        "exclusion": 1.0e-4, "min_step": 1.0e-6, "threads": 1,
    },
    "output": {"directory": "results", "formats": ["csv", "json"]},
}


@dataclass
class RunSpec:
    structure: StructureSpec
    h: float
    physics: dict
    numerics: dict
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def h_scan(self):
        return self.raw["structure"]["h_scan"]


def _num(v, path, positive=False, integer=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, f"expected a number, got {v!r}")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise SchemaError(path, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise SchemaError(path, "must be finite")
    if positive and not v > 0:
        raise SchemaError(path, f"must be > 0, got {v!r}")
    return v


def _block(d, defaults, path):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise SchemaError(path, "expected a mapping")
    unknown = sorted(set(d) - set(defaults))
    if unknown:
        raise SchemaError(f"{path}.{unknown[0]}", "unknown key")
    out = copy.deepcopy(defaults)
    out.update(d)
    return out


def _inclusion(d, path):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected a mapping")
    shape = d.get("shape")
    keys = {"disk": _DISK_KEYS, "rectangle": _RECT_KEYS}.get(shape)
    if keys is None:
        raise SchemaError(f"{path}.shape", f"expected 'disk' or 'rectangle', got {shape!r}")
    extra = sorted(set(d) - set(keys) - {"shape"})
    if extra:
        raise SchemaError(f"{path}.{extra[0]}", "unknown key")
    vals = {}
    for k in keys:
        if k not in d:
            raise SchemaError(f"{path}.{k}", "missing")
        vals[k] = _num(d[k], f"{path}.{k}")
    if vals["eps"] < 1.0:
        raise SchemaError(f"{path}.eps", "permittivity must be >= 1")
    norm = {"shape": shape, **vals}
    try:
        if shape == "disk":
            inc = Inclusion(Disk(vals["cx"], vals["cz"], vals["r"]), vals["eps"])
        else:
            inc = Inclusion(Rectangle(vals["x0"], vals["x1"], vals["z0"], vals["z1"]), vals["eps"])
    except ValueError as e:
        raise SchemaError(path, str(e)) from None
    return inc, norm


def _inclusions(lst, path):
    if lst is None:
        lst = []
    if not isinstance(lst, list):
        raise SchemaError(path, "expected a list")
    pairs = [_inclusion(d, f"{path}[{i}]") for i, d in enumerate(lst)]
    return tuple(p[0] for p in pairs), [p[1] for p in pairs]


def _range3(v, path):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise SchemaError(path, "expected [start, stop, num]")
    a, b = _num(v[0], f"{path}[0]"), _num(v[1], f"{path}[1]")
    n = _num(v[2], f"{path}[2]", positive=True, integer=True)
    return [a, b, n]


def _normalize(d: dict) -> tuple[dict, StructureSpec, float]:
    if not isinstance(d, dict):
        raise SchemaError("$", "top level must be a mapping")
    unknown = sorted(set(d) - set(DEFAULTS))
    if unknown:
        raise SchemaError(unknown[0], "unknown block")
    if "structure" not in d:
        raise SchemaError("structure", "missing")
    st = _block(d["structure"], DEFAULTS["structure"], "structure")
    incs, st["inclusions"] = _inclusions(st["inclusions"], "structure.inclusions")
    coupling, h_range = None, (-math.inf, math.inf)
    if st["coupling"] is not None:
        c = _block(st["coupling"], {"upper": [], "lower": [], "h_range": None}, "structure.coupling")
        up, c["upper"] = _inclusions(c["upper"], "structure.coupling.upper")
        lo, c["lower"] = _inclusions(c["lower"], "structure.coupling.lower")
        hr = c["h_range"]
        if not isinstance(hr, (list, tuple)) or len(hr) != 2:
            raise SchemaError("structure.coupling.h_range", "expected [lo, hi]")
        hr = [_num(hr[0], "structure.coupling.h_range[0]"), _num(hr[1], "structure.coupling.h_range[1]")]
        if not hr[0] < hr[1]:
            raise SchemaError("structure.coupling.h_range", "needs lo < hi")
        c["h_range"] = hr
        coupling, h_range = DoubleArray(up, lo), tuple(hr)
        st["coupling"] = c
    s = StructureSpec(incs, coupling, h_range)

    def inside(v, path):
        if coupling is not None and not h_range[0] < v < h_range[1]:
            raise SchemaError(path, f"h={v} outside the coupling interval {list(h_range)}")
        return v

    if coupling is None:
        if st["h"] not in (None, 0, 0.0) or st["h_scan"] is not None:
            raise SchemaError("structure.h", "h and h_scan need a coupling block")
        st["h"] = 0.0
    else:
        scan = st["h_scan"]
        if scan is not None:
            scan = _block(scan, {"start": None, "stop": None, "step": 0.01}, "structure.h_scan")
            for k in ("start", "stop"):
                scan[k] = inside(_num(scan[k], f"structure.h_scan.{k}"), f"structure.h_scan.{k}")
            scan["step"] = _num(scan["step"], "structure.h_scan.step", positive=True)
            st["h_scan"] = scan
        if st["h"] is None:
            if scan is None:
                raise SchemaError("structure.h", "missing (needed for a coupled structure)")
            st["h"] = scan["start"]
        st["h"] = inside(_num(st["h"], "structure.h"), "structure.h")

    ph = _block(d.get("physics"), DEFAULTS["physics"], "physics")
    ph["kx"] = _num(ph["kx"], "physics.kx")
    if ph["region"] is not None:
        r = ph["region"]
        if not isinstance(r, (list, tuple)) or len(r) != 4:
            raise SchemaError("physics.region", "expected [re_min, re_max, im_min, im_max]")
        r = [_num(v, f"physics.region[{i}]") for i, v in enumerate(r)]
        if not (r[0] < r[1] and r[2] < r[3]):
            raise SchemaError("physics.region", "empty rectangle")
        if r[3] > 0:
            raise SchemaError("physics.region[3]", "poles lie in the lower half-plane; im_max must be <= 0")
        ph["region"] = r
    if ph["target"] is not None:
        t = ph["target"]
        if not isinstance(t, (list, tuple)) or len(t) != 2:
            raise SchemaError("physics.target", "expected [re, im]")
        ph["target"] = [_num(t[0], "physics.target[0]"), _num(t[1], "physics.target[1]")]
    if ph["k_grid"] is not None:
        g = _block(ph["k_grid"], {"start": None, "stop": None, "num": None}, "physics.k_grid")
        g["start"] = _num(g["start"], "physics.k_grid.start", positive=True)
        g["stop"] = _num(g["stop"], "physics.k_grid.stop", positive=True)
        g["num"] = _num(g["num"], "physics.k_grid.num", positive=True, integer=True)
        ph["k_grid"] = g
    if ph["mode_grid"] is not None:
        g = _block(ph["mode_grid"], {"x": [0.0, 1.0, 21], "z": [-1.0, 1.0, 41]}, "physics.mode_grid")
        g["x"], g["z"] = _range3(g["x"], "physics.mode_grid.x"), _range3(g["z"], "physics.mode_grid.z")
        ph["mode_grid"] = g
    pk = _block(ph["packet"], DEFAULTS["physics"]["packet"], "physics.packet")
    for k in ("k_c", "sigma", "t_stop"):
        pk[k] = _num(pk[k], f"physics.packet.{k}", positive=True, allow_none=True)
    pk["c"] = _num(pk["c"], "physics.packet.c", positive=True)
    pk["num"] = _num(pk["num"], "physics.packet.num", positive=True, integer=True)
    ph["packet"] = pk
    bd = _block(ph["bic_deltas"], DEFAULTS["physics"]["bic_deltas"], "physics.bic_deltas")
    bd["min"] = _num(bd["min"], "physics.bic_deltas.min", positive=True)
    bd["max"] = _num(bd["max"], "physics.bic_deltas.max", positive=True)
    bd["num"] = _num(bd["num"], "physics.bic_deltas.num", positive=True, integer=True)
    if not bd["min"] < bd["max"]:
        raise SchemaError("physics.bic_deltas", "needs min < max")
    ph["bic_deltas"] = bd

    nu = _block(d.get("numerics"), DEFAULTS["numerics"], "numerics")
    nu["order"] = _num(nu["order"], "numerics.order", positive=True, integer=True)
    nu["M"] = _num(nu["M"], "numerics.M", positive=True, integer=True, allow_none=True)
    g = nu["scan_grid"]
    if not isinstance(g, (list, tuple)) or len(g) != 2:
        raise SchemaError("numerics.scan_grid", "expected [n_re, n_im]")
    nu["scan_grid"] = [_num(g[i], f"numerics.scan_grid[{i}]", positive=True, integer=True) for i in (0, 1)]
    for k in ("tol", "sv_threshold", "exclusion", "min_step"):
        nu[k] = _num(nu[k], f"numerics.{k}", positive=True)
    nu["threads"] = _num(nu["threads"], "numerics.threads", positive=True, integer=True)

    out = _block(d.get("output"), DEFAULTS["output"], "output")
    if not isinstance(out["directory"], str) or not out["directory"]:
        raise SchemaError("output.directory", "expected a non-empty string")
    fm = out["formats"]
    if not isinstance(fm, list) or not set(fm) <= {"csv", "json"}:
        raise SchemaError("output.formats", "expected a subset of [csv, json]")
    out["formats"] = sorted(set(fm))

    norm = {"structure": st, "physics": ph, "numerics": nu, "output": out}
    return norm, s, st["h"]


def parse_config(text: str) -> RunSpec:
    """Validate YAML ``text`` and fill in defaults."""
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise SchemaError("$", f"not valid YAML: {e}") from None
    norm, s, h = _normalize(d)
    return RunSpec(s, h, norm["physics"], norm["numerics"], norm["output"], norm)


def serialize(spec: RunSpec) -> str:
    """Canonical YAML text of a parsed spec."""
    return yaml.safe_dump(spec.raw, sort_keys=True, default_flow_style=None)


def normalize(text: str) -> str:
    """Canonical form of a config text: defaults filled, keys sorted."""
    norm, _, _ = _normalize(yaml.safe_load(text))
    return yaml.safe_dump(norm, sort_keys=True, default_flow_style=None)
