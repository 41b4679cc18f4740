"""Command-line runner.

``siegert <command> --config run.yaml [--out DIR] [--threads N]``

Each run writes into a fresh directory ``<out>/<command>-<hash>-<NNN>``
holding the result files and ``manifest.json`` (input hash, timings,
warnings and the sha256 of every output).  Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure; on failure a JSON error record is
printed to stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import RunSpec, parse_config, serialize
from .errors import NumericalError, SchemaError, SiegertError

COMMANDS = ("poles", "modes", "scatter", "sweep-h", "amplify", "decay")
MODES_HEADER = ("x", "z", "re_E", "im_E")
BRANCH_HEADER = ("h", "re_kappa", "im_kappa", "gamma", "a_n_re", "a_n_im", "field_norm")
AMPLITUDE_HEADER = ("k", "re_r0", "im_r0", "re_t0", "im_t0")
AMPLIFY_HEADER = ("h", "gamma", "k", "near_norm", "far_norm", "flux_deficit")
VERSION = "0.1.0"


def fmt(x) -> str:
    """17 significant digits, enough for a lossless double round trip."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and non-finite values as null."""
    pad, pad1 = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad1}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad1 + to_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, complex):
        return to_json([obj.real, obj.imag], indent)
    return json.dumps(str(obj))


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(fmt(v) for v in r) + "\n")


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextmanager
def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS threads then follow the environment
        yield
        return
    with threadpool_limits(limits=n):
        yield


class Run:
    """Output directory, stage timer and warning sink for one command."""

    def __init__(self, base: Path, command: str, input_hash: str, formats):
        base.mkdir(parents=True, exist_ok=True)
        stem = f"{command}-{input_hash[:12]}"
        n = 0
        while (base / f"{stem}-{n:03d}").exists():
            n += 1
        self.dir = base / f"{stem}-{n:03d}"
        self.dir.mkdir()
        self.formats = set(formats)
        self.files = []
        self.timings = {}
        self.warnings = []

    @contextmanager
    def stage(self, name):
        t = time.perf_counter()
        yield
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            write_csv(self.dir / name, header, rows)
            self.files.append(name)

    def json(self, name, obj):
        if "json" in self.formats:
            (self.dir / name).write_text(to_json(obj) + "\n")
            self.files.append(name)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def _pole_record(p):
    amps = {str(m): {"up": [a.real, a.imag], "down": [b.real, b.imag]} for m, (a, b) in sorted(p.amplitudes.items())}
    return {"re_kappa": p.kappa_n.real, "im_kappa": p.kappa_n.imag, "gamma": p.gamma,
            "residual": p.residual, "amplitudes": amps}


def _poles_at(spec: RunSpec, run: Run, h: float):
    from .poles import Candidate, find_poles, refine_pole

    ph, nu = spec.physics, spec.numerics
    if ph["target"] is not None:
        kap = complex(*ph["target"])
        with run.stage("refine"):
            return [refine_pole(Candidate(kap, 0.0, spec.structure, h, ph["kx"], nu["order"]), tol=nu["tol"])]
    if ph["region"] is None:
        raise SchemaError("physics.region", "needed to search for poles (or give physics.target)")
    with run.stage("scan_refine"):
        res = find_poles(spec.structure, h, ph["kx"], tuple(ph["region"]), tuple(nu["scan_grid"]), nu["order"],
                         nu["tol"], nu["sv_threshold"])
    run.warnings += res.warnings
    return res.poles


def cmd_poles(spec: RunSpec, run: Run):
    poles = _poles_at(spec, run, spec.h) if not spec.structure.is_empty else []
    run.json("poles.json", [_pole_record(p) for p in poles])
    return {"count": len(poles)}


def cmd_modes(spec: RunSpec, run: Run):
    g = spec.physics["mode_grid"]
    if g is None:
        raise SchemaError("physics.mode_grid", "needed by modes")
    poles = _poles_at(spec, run, spec.h) if not spec.structure.is_empty else []
    run.json("poles.json", [_pole_record(p) for p in poles])
    xs = np.linspace(*g["x"][:2], g["x"][2])
    zs = np.linspace(*g["z"][:2], g["z"][2])
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    with run.stage("fields"):
        for i, p in enumerate(poles):
            E = p.field()(X.ravel(), Z.ravel())
            run.csv(f"mode_{i:03d}.csv", MODES_HEADER, zip(X.ravel(), Z.ravel(), E.real, E.imag))
    return {"count": len(poles)}


def cmd_scatter(spec: RunSpec, run: Run):
    from .scattering import SpectrumTable, spectrum

    g = spec.physics["k_grid"]
    if g is None:
        raise SchemaError("physics.k_grid", "needed by scatter")
    ks = np.linspace(g["start"], g["stop"], g["num"])
    with run.stage("spectrum"):
        tab = spectrum(spec.structure, spec.h, ks, spec.physics["kx"], spec.numerics["order"],
                       spec.numerics["exclusion"])
    run.warnings += [{"type": e[2]["type"], "k": e[1], "message": e[2]["message"]} for e in tab.errors]
    run.csv("spectrum.csv", SpectrumTable.HEADER, tab.rows())
    # complex zeroth orders, for fits that resolve Fano interference
    run.csv("amplitudes.csv", AMPLITUDE_HEADER,
            zip(tab.k, tab.r0.real, tab.r0.imag, tab.t0.real, tab.t0.imag))
    return {"points": len(ks), "max_flux_deficit": float(np.nanmax(tab.flux_deficit))}


def _branch(spec: RunSpec, run: Run):
    from .continuation import continue_pole

    scan = spec.h_scan
    if scan is None:
        raise SchemaError("structure.h_scan", "needed by this command")
    if spec.physics["target"] is None:
        raise SchemaError("physics.target", "needed to pick the branch to follow")
    start = _poles_at(spec, run, scan["start"])[0]
    with run.stage("continuation"):
        return continue_pole(spec.structure, start, scan["stop"], scan["step"], spec.numerics["min_step"],
                             tol=spec.numerics["tol"])


def cmd_sweep_h(spec: RunSpec, run: Run):
    from .continuation import detect_bic
    from .errors import NoMinimum
    from .poles import strip_norm
    from .scattering import residue_amplitude

    br = _branch(spec, run).sorted()
    rows = []
    with run.stage("amplitudes"):
        for smp in br.samples:
            a = residue_amplitude(smp.pole, boundary=False).a_n
            rows.append((smp.h, smp.kappa_n.real, smp.kappa_n.imag, smp.pole.gamma, a.real, a.imag,
                         strip_norm(smp.pole)))
    run.csv("branch.csv", BRANCH_HEADER, rows)
    summary = {"samples": len(rows), "bic": None}
    with run.stage("bic"):
        try:
            bic = detect_bic(br)
        except NoMinimum as e:
            run.warnings.append({"type": "NoMinimum", "message": str(e)})
            bic = None
    if bic is not None:
        summary["bic"] = {"h_b": bic.h_b, "kappa_b": bic.kappa_b, "gamma_min": bic.gamma_min,
                          "interval": bic.interval_index}
    run.json("bic.json", summary)
    return summary


def cmd_amplify(spec: RunSpec, run: Run):
    from .continuation import amplification_curve, detect_bic, power_law_exponent, sample_near_bic

    br = _branch(spec, run).sorted()
    with run.stage("bic"):
        bic = detect_bic(br)
    if bic is None:
        raise NumericalError("no bound state on the scanned branch")
    d = spec.physics["bic_deltas"]
    deltas = np.geomspace(d["min"], d["max"], d["num"])
    side = 1.0 if spec.h_scan["start"] > bic.h_b else -1.0
    with run.stage("near_bic"):
        near = sample_near_bic(bic, deltas, side)
    # the first sample is the bound state itself, whose width is roundoff
    near.samples = [smp for smp in near.samples if smp.h != bic.h_b]
    with run.stage("amplification"):
        rows = amplification_curve(spec.structure, near, spec.physics["kx"])
    run.csv("amplify.csv", AMPLIFY_HEADER,
            [(r.h, r.gamma, r.k, r.near_norm, r.far_norm, r.flux_deficit) for r in rows])
    g = [r.gamma for r in rows]
    summary = {"h_b": bic.h_b, "kappa_b": bic.kappa_b,
               "near_slope": power_law_exponent(g, [r.near_norm for r in rows]),
               "far_ratio": max(r.far_norm for r in rows) / min(r.far_norm for r in rows)}
    run.json("amplify.json", summary)
    return summary


def cmd_decay(spec: RunSpec, run: Run):
    from .decay import (DECAY_HEADER, WavePacket, decay_constants, decay_trace, half_life, observation_window,
                        transient_end)

    from .poles import GAMMA_BIC_TOL

    poles = _poles_at(spec, run, spec.h)
    if not poles:
        raise NumericalError("no pole found for the decay run")
    # the narrowest excitable pole, falling back to a bound state
    radiating = [p for p in poles if p.gamma > GAMMA_BIC_TOL]
    kap = min(radiating, key=lambda p: p.gamma).kappa_n if radiating else poles[0].kappa_n
    pk = spec.physics["packet"]
    k_c = pk["k_c"] if pk["k_c"] is not None else decay_constants(kap, pk["c"])[0]
    sigma = pk["sigma"] if pk["sigma"] is not None else math.sqrt(max(-kap.imag, 0.0)) / 2
    if not sigma > 0:
        raise SchemaError("physics.packet.sigma", "cannot default to sqrt(Gamma)/2 for Gamma = 0")
    packet = WavePacket(k_c, sigma, pk["c"])
    t_max, ok = observation_window(kap, packet)
    t_stop = pk["t_stop"] if pk["t_stop"] is not None else 1.5 * t_max
    ts = np.linspace(0.0, t_stop, pk["num"])
    with run.stage("quadrature"):
        tr = decay_trace(kap, packet, ts, threads=spec.numerics["threads"])
        hl = half_life(kap, packet)
    run.csv("decay.csv", DECAY_HEADER, tr.rows())
    summary = {"kappa_n": kap, "k_c": k_c, "sigma": sigma, "c": packet.c, "k_tilde": tr.k_tilde, "tau": tr.tau,
               "t_max": t_max, "sigma_ok": ok, "transient_end": transient_end(packet), "half_life": hl,
               "half_life_expected": math.log(2) * tr.tau, "time_unit": 1.0 / (packet.c * k_c)}
    run.json("decay.json", summary)
    return summary


_DISPATCH = {"poles": cmd_poles, "modes": cmd_modes, "scatter": cmd_scatter, "sweep-h": cmd_sweep_h,
             "amplify": cmd_amplify, "decay": cmd_decay}


def run(command: str, spec: RunSpec, out: Path | None = None, threads: int | None = None,
        input_text: str | None = None) -> Path:
    """Execute ``command`` and return the results directory."""
    if command not in _DISPATCH:
        raise SchemaError("command", f"unknown command {command!r}")
    if threads is not None:
        spec.numerics["threads"] = int(threads)
    canon = serialize(spec)
    input_hash = hashlib.sha256(canon.encode()).hexdigest()
    r = Run(Path(out) if out is not None else Path(spec.output["directory"]), command, input_hash,
            spec.output["formats"])
    (r.dir / "config.yaml").write_text(canon)
    t0 = time.perf_counter()
    with _thread_limit(spec.numerics["threads"]):
        summary = _DISPATCH[command](spec, r)
    manifest = {
        "tool": "siegert", "version": VERSION, "command": command, "input_sha256": input_hash,
        "threads": spec.numerics["threads"], "wall_time_s": time.perf_counter() - t0,
        "timings_s": r.timings, "warnings": r.warnings, "summary": summary,
        "files": {name: sha256(r.dir / name) for name in ["config.yaml"] + r.files},
    }
    if input_text is not None:
        manifest["raw_input_sha256"] = hashlib.sha256(input_text.encode()).hexdigest()
    (r.dir / "manifest.json").write_text(to_json(manifest) + "\n")
    return r.dir


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="siegert", description="Siegert states of periodic dielectric structures")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        spec = parse_config(text)
        if args.threads is not None and args.threads < 1:
            raise SchemaError("--threads", "must be >= 1")
        d = run(args.command, spec, args.out, args.threads, text)
    except SchemaError as e:
        print(json.dumps(e.to_dict()))
        return 2
    except SiegertError as e:
        print(json.dumps(e.to_dict()))
        return 3
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(json.dumps({"error": "numerical", "type": type(e).__name__, "message": str(e)}))
        return 3
    except OSError as e:
        print(json.dumps({"error": "io", "type": type(e).__name__, "message": str(e)}))
        return 2
    print(json.dumps({"status": "ok", "directory": str(d)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
