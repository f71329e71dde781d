"""TOML case configuration: strict parsing (unknown keys are hard errors),
default resolution, and manifest emission for bitwise-reproducible reruns."""

from dataclasses import dataclass, field

import tomli

from .coeffs import KappaModel

__all__ = ["CaseConfig", "ConfigError", "load_config", "resolve", "dump_manifest"]


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "": {"case", "version", "output_dir"},  # the latter two: manifest metadata
    "mesh": {"nx", "ny", "Lx", "Ly", "periodic_x", "periodic_y",
             "perturb_factor", "seed", "nr", "ntheta", "r0", "r1"},
    "discretization": {"scheme", "degree", "zeta_space"},
    "schedule": {"dt", "n_steps", "dt0", "dt_final", "n_ramp", "t_max"},
    "kappa": {"mode", "kappa_par", "kappa_perp", "t_limit", "sigma_limit"},
    "diagnostics": {"list"},
    "case_params": {"sigma", "fourier_modes", "slope", "t_background", "xi0",
                    "floor", "layer_cells", "band_lo_frac", "band_hi_frac"},
    "output": {"snapshot_every"},
    "convergence": {"levels", "base_cells"},
}

_CASES = ("gaussian", "flux_surface", "annulus_equilibrium")
_SCHEMES = ("primal", "mixed", "supg")


@dataclass
class CaseConfig:
    """Fully resolved benchmark description."""

    case: str
    scheme: str = "supg"
    degree: int = 2
    zeta_space: str = None
    mesh: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    kappa: dict = field(default_factory=dict)
    case_params: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    snapshot_every: int = 0
    seed: int = 0
    convergence: dict = field(default_factory=dict)

    def kappa_model(self):
        k = self.kappa
        if k.get("mode", "constant") == "constant":
            return KappaModel("constant", K_par=k.get("kappa_par", 1.0),
                              K_perp=k.get("kappa_perp", 0.0))
        return KappaModel("braginskii_limited", K_par=k.get("kappa_par", 8.8e3),
                          K_perp=k.get("kappa_perp", 0.0),
                          T_limit=k.get("t_limit", 0.1),
                          sigma_limit=k.get("sigma_limit", 0.04))


def _check_keys(raw):
    for section, content in raw.items():
        if isinstance(content, dict):
            allowed = _SCHEMA.get(section)
            if allowed is None:
                raise ConfigError(f"unknown config section [{section}]")
            for key in content:
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
        else:
            if section not in _SCHEMA[""]:
                raise ConfigError(f"unknown top-level key {section!r}")


def load_config(path):
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    return resolve(raw)


def resolve(raw):
    """Validate a raw config dict and materialize all defaults."""
    _check_keys(raw)
    case = raw.get("case")
    if case not in _CASES:
        raise ConfigError(f"case must be one of {_CASES}, got {case!r}")
    disc = raw.get("discretization", {})
    scheme = disc.get("scheme", "supg")
    if scheme not in _SCHEMES:
        raise ConfigError(f"scheme must be one of {_SCHEMES}, got {scheme!r}")
    degree = int(disc.get("degree", 2))
    if degree < 1:
        raise ConfigError("polynomial degree must be at least 1")
    zeta = disc.get("zeta_space")
    if zeta is None:
        zeta = "cg" if scheme == "supg" else ("dq" if scheme == "mixed" else "none")
    if scheme == "supg" and zeta != "cg":
        raise ConfigError("the SUPG scheme needs a continuous zeta space of equal degree")
    if scheme == "mixed" and zeta not in ("dq", "cg"):
        raise ConfigError("the mixed scheme pairs with a dq (or cg) zeta space")

    mesh = dict(raw.get("mesh", {}))
    if case in ("gaussian", "flux_surface"):
        if case == "gaussian":
            mesh.setdefault("nx", 40)
            mesh.setdefault("ny", 40)
            mesh.setdefault("Lx", 1.0)
            mesh.setdefault("Ly", 1.0)
            mesh.setdefault("periodic_x", False)
            mesh.setdefault("periodic_y", False)
            mesh.setdefault("perturb_factor", 0.0)
        else:
            mesh.setdefault("nx", 120)
            mesh.setdefault("ny", 96)
            mesh.setdefault("Lx", 5.0)
            mesh.setdefault("Ly", 4.0)
            mesh.setdefault("periodic_x", True)
            mesh.setdefault("periodic_y", True)
            mesh.setdefault("perturb_factor", 0.1)
        mesh.setdefault("seed", 7)
    else:
        mesh.setdefault("nr", 16)
        mesh.setdefault("ntheta", 128)
        mesh.setdefault("r0", 1.0)
        mesh.setdefault("r1", 2.0)
        mesh.setdefault("perturb_factor", 0.2)
        mesh.setdefault("seed", 7)

    sched = dict(raw.get("schedule", {}))
    if case == "gaussian":
        sched.setdefault("dt", 1e-5)
        sched.setdefault("n_steps", 400)
    elif case == "flux_surface":
        sched.setdefault("dt0", 1e-4)
        sched.setdefault("dt_final", 0.1)
        sched.setdefault("n_ramp", 20)
        sched.setdefault("t_max", 14.0)
    else:
        sched.setdefault("dt0", 1e-5)
        sched.setdefault("dt_final", 5.0)
        sched.setdefault("n_ramp", 100)
        sched.setdefault("t_max", 1e4)

    kappa = dict(raw.get("kappa", {}))
    if case == "gaussian":
        kappa.setdefault("mode", "constant")
        kappa.setdefault("kappa_par", 1.0)
        kappa.setdefault("kappa_perp", 0.01)
    elif case == "flux_surface":
        kappa.setdefault("mode", "constant")
        kappa.setdefault("kappa_par", 10.0)
        kappa.setdefault("kappa_perp", 0.0)
    else:
        kappa.setdefault("mode", "braginskii_limited")
        kappa.setdefault("kappa_par", 8.8e3)
        kappa.setdefault("kappa_perp", 0.0)
        kappa.setdefault("t_limit", 0.1)
        kappa.setdefault("sigma_limit", 0.04)
    if kappa.get("mode") not in ("constant", "braginskii_limited"):
        raise ConfigError(f"unknown kappa mode {kappa.get('mode')!r}")

    diag = raw.get("diagnostics", {}).get(
        "list", ["rel_total"] if case == "annulus_equilibrium" else ["l2_error"])
    conv = dict(raw.get("convergence", {}))
    conv.setdefault("levels", [1, 2, 3])
    conv.setdefault("base_cells", 10)

    return CaseConfig(case=case, scheme=scheme, degree=degree, zeta_space=zeta,
                      mesh=mesh, schedule=sched, kappa=kappa,
                      case_params=dict(raw.get("case_params", {})),
                      diagnostics=list(diag),
                      snapshot_every=int(raw.get("output", {}).get("snapshot_every", 0)),
                      seed=int(mesh.get("seed", 0)), convergence=conv)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def dump_manifest(cfg, path, extra=None):
    """Write the resolved config (plus flat `extra` metadata) as TOML; loading
    the manifest as a config reproduces the run."""
    lines = [f"case = {_toml_value(cfg.case)}"]
    if extra:
        for k, v in extra.items():
            lines.append(f"{k} = {_toml_value(v)}")

    def section(name, payload):
        if not payload:
            return
        lines.append("")
        lines.append(f"[{name}]")
        for k, v in payload.items():
            lines.append(f"{k} = {_toml_value(v)}")

    section("mesh", cfg.mesh)
    section("discretization", {"scheme": cfg.scheme, "degree": cfg.degree,
                               "zeta_space": cfg.zeta_space})
    section("schedule", cfg.schedule)
    section("kappa", cfg.kappa)
    section("case_params", cfg.case_params)
    section("diagnostics", {"list": cfg.diagnostics})
    section("output", {"snapshot_every": cfg.snapshot_every})
    if cfg.case == "gaussian":
        section("convergence", cfg.convergence)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
