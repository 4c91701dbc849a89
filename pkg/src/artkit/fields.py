"""Analytic phantoms, absorption coefficients, grid sampling, and ARTK files.

Phantoms are closed-form functions f(t, x, xi), so ray and sphere quadratures
can evaluate them at arbitrary off-grid points; grids enter only where a
field must be differentiated or persisted. All evaluators are vectorized
over an (..., 3) array of points.

Shipped spatial profiles keep their effective support inside the unit ball
(|f| < 1e-14 outside), which is what makes truncating ray integrals at the
domain boundary exact to working precision.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import GridField, SymTensor, contract_direction, num_components

__all__ = [
    "TimeProfile",
    "PhaseField",
    "gaussian_phantom",
    "ball_bump_phantom",
    "tensor_phantom",
    "AbsorptionSpec",
    "constant_absorption",
    "ZERO_ABSORPTION",
    "spatial_absorption",
    "xi_polynomial_absorption",
    "eval_field",
    "eval_field_r2",
    "spatial_center",
    "eval_alpha",
    "alpha_is_ray_constant",
    "alpha_along_direction",
    "sample_grid",
    "save_grid",
    "load_grid",
    "ArtkFormatError",
]


# ---------------------------------------------------------------------------
# temporal profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeProfile:
    """Temporal factor g(t); causal kinds vanish identically for t < 0.

    kinds: "off" (g = 1), "gaussian_pulse" (windowed to t >= 0; keep
    center >> width so the cutoff sits below 1e-14), "causal_ramp" (smooth
    0 -> 1 transition over [0, width], exactly 1 for t >= width).
    """

    kind: str = "off"
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("off", "gaussian_pulse", "causal_ramp"):
            raise ValueError(f"unknown time profile kind {self.kind!r}")
        if self.kind != "off" and not self.width > 0:
            raise ValueError("time profile width must be positive")

    @property
    def causal(self):
        return self.kind != "off"


def _smooth_step(s):
    """C-infinity transition: exactly 0 for s <= 0 and exactly 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    lo = np.zeros_like(s)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0.0, np.exp(-1.0 / np.maximum(s, 1e-300)), lo)
        b = np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), lo)
    out = np.where(s <= 0.0, 0.0, np.where(s >= 1.0, 1.0, a / (a + b)))
    return out


def time_value(profile, t):
    """Temporal factor at time(s) t; t=None evaluates the stationary limit 1."""
    if t is None:
        return 1.0
    t = np.asarray(t, dtype=float)
    if profile.kind == "off":
        return np.ones_like(t)
    if profile.kind == "gaussian_pulse":
        g = np.exp(-0.5 * ((t - profile.center) / profile.width) ** 2)
        return np.where(t < 0.0, 0.0, g)
    # causal_ramp
    return _smooth_step(t / profile.width)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseField:
    """Analytic source phantom f(t, x, xi).

    kind "gaussian": amplitude * exp(-|x-c|^2 / (2 width^2))
    kind "ball_bump": amplitude * exp(1 - 1/(1 - |(x-c)/width|^2)) inside the
        support ball of radius width, exactly zero outside (C-infinity)
    kind "tensor": <W(t,x), xi^m> with W(t,x) = tensor * envelope, where the
        envelope is one of the scalar kinds above (or constant 1 if None)

    Any kind may carry a temporal profile; the spatial value is multiplied by
    the profile, so sources factorize in time.
    """

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    width: float = 0.12
    amplitude: complex = 1.0 + 0.0j
    tensor: SymTensor | None = None
    envelope: "PhaseField | None" = None
    time: TimeProfile = field(default_factory=TimeProfile)

    def __post_init__(self):
        if self.kind not in ("gaussian", "ball_bump", "tensor"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.kind == "tensor" and self.tensor is None:
            raise ValueError("tensor phantom needs a base tensor")
        if self.kind != "tensor" and not self.width > 0:
            raise ValueError("phantom width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    @property
    def rank(self):
        return 0 if self.kind != "tensor" else self.tensor.rank


def gaussian_phantom(center=(0.0, 0.0, 0.0), width=0.12, amplitude=1.0, time=None):
    return PhaseField("gaussian", center, width, amplitude, time=time or TimeProfile())


def ball_bump_phantom(center=(0.0, 0.0, 0.0), width=0.8, amplitude=1.0, time=None):
    return PhaseField("ball_bump", center, width, amplitude, time=time or TimeProfile())


def tensor_phantom(tensor, envelope=None, time=None):
    return PhaseField("tensor", tensor=tensor, envelope=envelope,
                      time=time or TimeProfile())


def _radial_value(f, r2):
    """Spatial factor of a scalar phantom from squared distance to its center."""
    if f.kind == "gaussian":
        return f.amplitude * np.exp(-0.5 * r2 / f.width**2)
    # ball_bump: C-infinity mollifier supported on |d| < width
    u = r2 / f.width**2
    inside = u < 1.0
    out = np.zeros(np.shape(r2), dtype=complex)
    safe = np.where(inside, 1.0 - u, 1.0)
    vals = f.amplitude * np.exp(1.0 - 1.0 / safe)
    if out.ndim == 0:
        return vals if inside else out
    out[inside] = vals[inside]
    return out


def _spatial_scalar(f, x):
    """Spatial factor of a scalar phantom at points x with shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(f.center)
    return _radial_value(f, np.einsum("...i,...i->...", d, d))


def spatial_center(f):
    """Center of the radial spatial factor (None for a constant envelope)."""
    if f.kind == "tensor":
        return None if f.envelope is None else np.asarray(f.envelope.center)
    return np.asarray(f.center)


def eval_field_r2(f, t, r2, xi):
    """Phantom value from precomputed squared distances to the spatial center.

    Equivalent to eval_field for the radially profiled phantom kinds; used on
    ray lattices where positions never need materializing.
    """
    if f.kind == "tensor":
        c = contract_direction(f.tensor, xi)
        env = 1.0 if f.envelope is None else _radial_value(f.envelope, r2)
        return c * env * time_value(f.time, t)
    return _radial_value(f, r2) * time_value(f.time, t)


def tensor_field_values(f, t, x):
    """Components of the generating tensor field W(t, x): shape (ncomp, ...)."""
    if f.kind != "tensor":
        raise ValueError("phantom has no generating tensor field")
    env = 1.0 if f.envelope is None else _spatial_scalar(f.envelope, x)
    g = time_value(f.time, t)
    shape = np.shape(np.asarray(x, dtype=float)[..., 0])
    base = np.broadcast_to(np.asarray(env * g + 0.0j, dtype=complex), shape)
    return f.tensor.comps.reshape((-1,) + (1,) * len(shape)) * base


def eval_field(f, t, x, xi):
    """Phantom value f(t, x, xi); stationary phantoms ignore t.

    x may be any (..., 3) array; xi is a single direction (tensor phantoms
    contract their base tensor with it once).
    """
    if f.kind == "tensor":
        c = contract_direction(f.tensor, xi)
        env = 1.0 if f.envelope is None else _spatial_scalar(f.envelope, x)
        return c * env * time_value(f.time, t)
    return _spatial_scalar(f, x) * time_value(f.time, t)


# ---------------------------------------------------------------------------
# absorption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbsorptionSpec:
    """Complex absorption alpha(x, xi) = eps(x, xi) + i rho(x, xi).

    kinds:
      constant      eps, rho constants
      spatial       eps_profile/rho_profile are callables x -> real values
      xi_polynomial constants plus homogeneous polynomial terms in xi with
                    symmetric tensor coefficients; each term is tagged with
                    the part it feeds. Odd-rank terms are refused on the eps
                    part so that eps >= 0 can hold without clamping.
    """

    kind: str = "constant"
    eps: float = 0.0
    rho: float = 0.0
    eps_profile: object = None
    rho_profile: object = None
    terms: tuple = ()  # (rank, SymTensor, "eps"|"rho")

    def __post_init__(self):
        if self.kind not in ("constant", "spatial", "xi_polynomial"):
            raise ValueError(f"unknown absorption kind {self.kind!r}")
        if self.kind == "constant" and self.eps < 0:
            raise ValueError("constant eps must be nonnegative")
        for rank, Q, part in self.terms:
            if part not in ("eps", "rho"):
                raise ValueError("term part must be 'eps' or 'rho'")
            if part == "eps" and rank % 2 == 1:
                raise ValueError("odd-rank polynomial terms are restricted to rho")
            if Q.rank != rank:
                raise ValueError("term rank does not match its tensor")


def constant_absorption(alpha):
    alpha = complex(alpha)
    return AbsorptionSpec("constant", eps=alpha.real, rho=alpha.imag)


ZERO_ABSORPTION = constant_absorption(0.0)


def spatial_absorption(eps_profile=None, rho_profile=None, eps=0.0, rho=0.0):
    return AbsorptionSpec("spatial", eps=eps, rho=rho,
                          eps_profile=eps_profile, rho_profile=rho_profile)


def xi_polynomial_absorption(terms, eps=0.0, rho=0.0):
    return AbsorptionSpec("xi_polynomial", eps=eps, rho=rho, terms=tuple(terms))


def eval_alpha(a, x, xi):
    """alpha(x, xi) = eps + i rho, broadcast over points x of shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    shape = np.shape(x[..., 0])
    val = np.full(shape, complex(a.eps, a.rho), dtype=complex)
    if a.kind == "spatial":
        if a.eps_profile is not None:
            val = val + np.asarray(a.eps_profile(x), dtype=float)
        if a.rho_profile is not None:
            val = val + 1j * np.asarray(a.rho_profile(x), dtype=float)
    elif a.kind == "xi_polynomial":
        for rank, Q, part in a.terms:
            c = contract_direction(Q, xi).real
            val = val + (c if part == "eps" else 1j * c)
    if shape == ():
        return complex(val)
    return val


def alpha_is_ray_constant(a):
    """True when alpha does not vary along a ray (constant or xi-only)."""
    return a.kind in ("constant", "xi_polynomial")


def alpha_along_direction(a, xi):
    """The constant alpha(xi) for ray-constant specs."""
    if not alpha_is_ray_constant(a):
        raise ValueError("alpha varies spatially")
    return eval_alpha(a, np.zeros(3), xi)


# ---------------------------------------------------------------------------
# sampling and persistence (ARTK binary format)
# ---------------------------------------------------------------------------

class ArtkFormatError(ValueError):
    """Raised for malformed ARTK files; the message carries a byte offset."""


_MAGIC = b"ARTK"
_HEADER = struct.Struct("<4sIIIIII6dd")  # magic, version, rank, nt, nx, ny, nz, box, dt


def sample_grid(f, dims, box, times=None):
    """Sample a phantom's spatial object on a node-centered grid.

    Scalar phantoms yield a rank-0 field of f(x); tensor phantoms yield the
    rank-m field of generating-tensor components W(t, x). With times given,
    a time axis (nt, dt) is attached and the temporal profile applied.
    """
    dims = tuple(int(d) for d in (dims if np.iterable(dims) else (dims,) * 3))
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError("dims must give at least 2 nodes per axis")
    box = np.asarray(box, dtype=float).reshape(2, 3)
    if np.any(box[1] <= box[0]):
        raise ValueError("degenerate bounding box")
    rank = f.rank
    axes = [np.linspace(box[0][a], box[1][a], dims[a]) for a in range(3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def snapshot(t):
        if f.kind == "tensor":
            return tensor_field_values(f, t, mesh)
        return _spatial_scalar(f, mesh)[None, ...] * time_value(f.time, t)

    if times is None:
        return GridField(rank, box, snapshot(0.0))
    times = np.asarray(times, dtype=float)
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    data = np.stack([snapshot(t) for t in times], axis=1)
    return GridField(rank, box, data, nt=len(times), dt=dt)


def save_grid(gf, path):
    """Write a GridField in the ARTK format (see README for the layout)."""
    nx, ny, nz = gf.dims
    header = _HEADER.pack(
        _MAGIC, 1, gf.rank, gf.nt, nx, ny, nz,
        *gf.box[0], *gf.box[1], gf.dt if gf.nt else 0.0,
    )
    blocks = [header]
    ncomp = num_components(gf.rank)
    for c in range(ncomp):
        slabs = gf.data[c] if gf.nt else gf.data[c][None, ...]
        for it in range(slabs.shape[0]):
            # x varies fastest on disk: Fortran raveling of the (x, y, z) block
            blocks.append(np.ascontiguousarray(
                slabs[it].ravel(order="F"), dtype="<c16").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blocks))


def load_grid(path):
    """Read an ARTK file back into a GridField, validating the header."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ArtkFormatError(
            f"truncated header: file ends at byte {len(raw)}, need {_HEADER.size}")
    magic, version, rank, nt, nx, ny, nz, *rest = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ArtkFormatError(
            f"bad magic {magic!r} at byte 0, expected {_MAGIC!r}")
    if version != 1:
        raise ArtkFormatError(f"unsupported version {version} at byte 4")
    box = np.array(rest[:6], dtype=float).reshape(2, 3)
    dt = rest[6]
    ncomp = num_components(rank)
    nslab = max(nt, 1)
    need = ncomp * nslab * nx * ny * nz * 16
    if len(raw) - _HEADER.size != need:
        raise ArtkFormatError(
            f"truncated data: file ends at byte {len(raw)}, "
            f"expected {_HEADER.size + need}")
    flat = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    flat = flat.reshape(ncomp, nslab, nx * ny * nz)
    # undo the Fortran raveling: stored x-fastest
    spatial = np.stack([
        np.stack([flat[c, it].reshape((nx, ny, nz), order="F") for it in range(nslab)])
        for c in range(ncomp)
    ])
    data = spatial if nt else spatial[:, 0]
    return GridField(rank, box, data.astype(complex), nt=nt, dt=dt if nt else 0.0)
