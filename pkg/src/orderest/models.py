"""Nested model families: parameterizations, log-densities and simulators.

Three families over a common interface:

- LM: location mixtures of Gaussians on R, K components, known scale sigma.
  theta = (weights, means); observations z = hidden mean + sigma * noise.
- AC: piecewise-constant regression on the unit square.  theta is a marked
  guillotine tree (recursive axis-aligned cuts, leaf marks); observations
  (x, y) with x uniform on [0,1]^2 and y = f_theta(x) + sigma * noise.
- VR: regression on [0,1] over the cosine basis t_k(x) = sqrt(2) cos(k pi x),
  theta = coefficient vector; x uniform on [0,1].

Means, marks and coefficients live in the compact interval M = [m_lo, m_hi]
from ModelConfig.  The families are nested: a K-parameter model embeds in the
(K+1)-parameter one with identical density (see embed()).

Randomness is derived from numpy SeedSequence keyed on (seed, path) so that
any consumer drawing "trial t of experiment seed s" gets a stream that
depends only on (s, t), never on execution order.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import logsumexp

from . import guillotine
from .guillotine import Leaf, Node, Split

LOG_2PI = math.log(2.0 * math.pi)
_SEED_MASK = (1 << 64) - 1

__all__ = [
    "Family", "ModelConfig", "ThetaLM", "ThetaVR", "ThetaAC", "Theta", "Sample",
    "ParameterError", "UsageError", "rng_for", "derive_seed", "simulate",
    "log_density", "point_log_densities", "log_likelihood", "eval_regression_fn",
    "vr_basis_matrix", "validate_theta", "theta_dim", "true_order", "embed",
    "random_theta", "Leaf", "Split",
    "config_to_kv", "config_from_kv", "theta_to_kv", "theta_from_kv",
    "sample_to_csv", "sample_from_csv", "fmt",
]


class ParameterError(ValueError):
    """A parameter lies outside its family's domain."""


class UsageError(ValueError):
    """An operation was applied outside its contract (wrong family, bad K, ...)."""


class Family(str, enum.Enum):
    LM = "LM"
    AC = "AC"
    VR = "VR"


def fmt(x: float) -> str:
    """Decimal text with enough digits to round-trip a float exactly."""
    return format(float(x), ".17g")


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Generator determined solely by (seed, path); order-independent."""
    key = tuple(int(p) & _SEED_MASK for p in path)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=key))


def derive_seed(seed: int, *path: int) -> int:
    """A 64-bit seed that is a pure function of (seed, path)."""
    ss = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK,
                                spawn_key=tuple(int(p) & _SEED_MASK for p in path))
    state = ss.generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class ModelConfig:
    """Family id plus everything that pins down the model classes Pi_K."""

    family: Family
    sigma: float = 1.0
    m_lo: float = -2.0
    m_hi: float = 2.0
    vr_basis: str = "cosine"
    ac_depth_max: int = 4

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.sigma > 0.0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.m_lo < self.m_hi:
            raise ParameterError(f"need m_lo < m_hi, got [{self.m_lo}, {self.m_hi}]")
        if self.family is Family.VR and not self.m_lo <= 0.0 <= self.m_hi:
            raise ParameterError("VR coefficient interval must contain 0")
        if self.vr_basis != "cosine":
            raise ParameterError(f"unknown basis {self.vr_basis!r}")
        if self.ac_depth_max < 1:
            raise ParameterError("ac_depth_max must be >= 1")


@dataclass(frozen=True)
class ThetaLM:
    """Mixture weights (all K of them, summing to 1) and component means."""

    weights: tuple[float, ...]
    means: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        if len(self.weights) != len(self.means) or len(self.weights) < 1:
            raise ParameterError("weights and means must have equal length >= 1")
        if any(w < 0.0 for w in self.weights):
            raise ParameterError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ParameterError(f"weights must sum to 1, got {sum(self.weights)!r}")

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class ThetaVR:
    """Coefficients on the cosine basis; length is the model index K."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) < 1:
            raise ParameterError("need at least one coefficient")

    @property
    def k(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class ThetaAC:
    """Marked guillotine tree over the unit square."""

    tree: Node

    def __post_init__(self):
        guillotine.validate_tree(self.tree)

    @property
    def k(self) -> int:
        return guillotine.leaf_count(self.tree)


Theta = Union[ThetaLM, ThetaVR, ThetaAC]


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations from one family.

    points has shape (n,) for LM (the z values), (n, 2) for VR (columns x, y)
    and (n, 3) for AC (columns x1, x2, y).
    """

    family: Family
    points: np.ndarray
    seed: int
    n: int

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        pts = np.asarray(self.points, dtype=float)
        expected = {Family.LM: 1, Family.VR: 2, Family.AC: 3}[self.family]
        if expected == 1:
            if pts.ndim != 1:
                raise ParameterError("LM points must be a 1-d array of z values")
        elif pts.ndim != 2 or pts.shape[1] != expected:
            raise ParameterError(f"{self.family.value} points must have shape (n, {expected})")
        if pts.shape[0] != self.n:
            raise ParameterError(f"n={self.n} does not match {pts.shape[0]} points")
        if self.family is not Family.LM and pts.size:
            x = pts[:, :-1]
            if x.min(initial=0.0) < 0.0 or x.max(initial=0.0) > 1.0:
                raise ParameterError("x coordinates must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def z(self) -> np.ndarray:
        return self.points

    @property
    def x(self) -> np.ndarray:
        if self.family is Family.VR:
            return self.points[:, 0]
        if self.family is Family.AC:
            return self.points[:, :2]
        raise UsageError("LM samples have no covariates")

    @property
    def y(self) -> np.ndarray:
        if self.family is Family.LM:
            raise UsageError("LM samples have no responses; use .z")
        return self.points[:, -1]

    def head(self, n: int) -> "Sample":
        """The first n observations, sharing storage (for growing-path traces)."""
        return Sample(self.family, self.points[:n], self.seed, n)


def _family_of(theta: Theta) -> Family:
    if isinstance(theta, ThetaLM):
        return Family.LM
    if isinstance(theta, ThetaVR):
        return Family.VR
    if isinstance(theta, ThetaAC):
        return Family.AC
    raise UsageError(f"not a parameter object: {theta!r}")


def validate_theta(config: ModelConfig, theta: Theta) -> None:
    """Family match plus the configuration-dependent range checks."""
    fam = _family_of(theta)
    if fam is not config.family:
        raise UsageError(f"theta is {fam.value} but config is {config.family.value}")
    lo, hi = config.m_lo, config.m_hi
    if fam is Family.LM:
        vals = theta.means
    elif fam is Family.VR:
        vals = theta.coeffs
    else:
        vals = tuple(m for *_, m in guillotine.iter_cells(theta.tree))
        if guillotine.tree_depth(theta.tree) > config.ac_depth_max:
            raise ParameterError(
                f"tree depth {guillotine.tree_depth(theta.tree)} exceeds cap {config.ac_depth_max}")
    for v in vals:
        if not lo <= v <= hi:
            raise ParameterError(f"value {v} outside [{lo}, {hi}]")


def theta_dim(family: Family, k: int) -> int:
    """Free-parameter count of the K-th class: 2K-1 for LM and AC, K for VR."""
    family = Family(family)
    if k < 1:
        raise UsageError("K must be >= 1")
    return k if family is Family.VR else 2 * k - 1


def true_order(config: ModelConfig, theta: Theta) -> int:
    """Lowest K whose class contains the distribution of theta.

    LM: distinct means among positive-weight components.  VR: index of the
    last nonzero coefficient.  AC: minimal leaf budget at which the population
    tree fit reproduces f_theta exactly.
    """
    validate_theta(config, theta)
    if isinstance(theta, ThetaLM):
        means = {m for w, m in zip(theta.weights, theta.means) if w > 0.0}
        return max(len(means), 1)
    if isinstance(theta, ThetaVR):
        k = len(theta.coeffs)
        while k > 1 and theta.coeffs[k - 1] == 0.0:
            k -= 1
        return k
    return guillotine.minimal_leaf_count(theta.tree, config.ac_depth_max,
                                         config.m_lo, config.m_hi)


def embed(config: ModelConfig, theta: Theta, k: int) -> Theta:
    """theta re-expressed in the K-th class with the same density.

    LM appends zero-weight components, VR appends zero coefficients, AC splits
    leaves into equal-mark halves.
    """
    validate_theta(config, theta)
    if isinstance(theta, ThetaLM):
        if k < theta.k:
            raise UsageError(f"cannot embed K={theta.k} into K={k}")
        filler = 0.5 * (config.m_lo + config.m_hi)
        return ThetaLM(theta.weights + (0.0,) * (k - theta.k),
                       theta.means + (filler,) * (k - theta.k))
    if isinstance(theta, ThetaVR):
        if k < theta.k:
            raise UsageError(f"cannot embed K={theta.k} into K={k}")
        return ThetaVR(theta.coeffs + (0.0,) * (k - theta.k))
    tree = theta.tree
    while guillotine.leaf_count(tree) < k:
        tree = guillotine.split_first_shallow_leaf(tree, config.ac_depth_max)
    if guillotine.leaf_count(tree) > k:
        raise UsageError(f"cannot embed a {theta.k}-leaf tree into K={k}")
    return ThetaAC(tree)


def random_theta(config: ModelConfig, k: int, rng: np.random.Generator) -> Theta:
    """A random parameter of the K-th class (probe clouds, property tests)."""
    lo, hi = config.m_lo, config.m_hi
    if config.family is Family.LM:
        w = rng.dirichlet(np.ones(k))
        w = w / w.sum()
        return ThetaLM(tuple(w), tuple(rng.uniform(lo, hi, k)))
    if config.family is Family.VR:
        return ThetaVR(tuple(rng.uniform(lo, hi, k)))
    leaves = int(rng.integers(1, min(k, 2 ** config.ac_depth_max) + 1))
    return ThetaAC(guillotine.random_tree(rng, leaves, config.ac_depth_max, lo, hi))


# ---------------------------------------------------------------------------
# Densities and simulation
# ---------------------------------------------------------------------------

def vr_basis_matrix(x: np.ndarray, k: int) -> np.ndarray:
    """Basis values t_j(x_i) = sqrt(2) cos(j pi x_i), shape (n, k)."""
    x = np.asarray(x, dtype=float)
    j = np.arange(1, k + 1)
    return math.sqrt(2.0) * np.cos(math.pi * np.multiply.outer(x, j))


def eval_regression_fn(config: ModelConfig, theta: Theta, x):
    """f_theta(x) for the regression families; UsageError for LM."""
    if config.family is Family.LM:
        raise UsageError("LM has no regression function")
    validate_theta(config, theta)
    if config.family is Family.VR:
        xs = np.asarray(x, dtype=float)
        vals = vr_basis_matrix(np.atleast_1d(xs), theta.k) @ np.asarray(theta.coeffs)
        return float(vals[0]) if xs.ndim == 0 else vals
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 1:
        return float(guillotine.eval_tree(theta.tree, xs))
    return guillotine.eval_tree(theta.tree, xs)


def point_log_densities(config: ModelConfig, theta: Theta, points: np.ndarray) -> np.ndarray:
    """log p_theta at every observation; points shaped like Sample.points."""
    validate_theta(config, theta)
    sigma = config.sigma
    norm_const = -0.5 * LOG_2PI - math.log(sigma)
    pts = np.asarray(points, dtype=float)
    if config.family is Family.LM:
        z = np.atleast_1d(pts)
        if z.size == 0:
            return np.zeros(0)
        means = np.asarray(theta.means)
        with np.errstate(divide="ignore"):
            log_w = np.log(np.asarray(theta.weights))
        comp = norm_const - 0.5 * ((z[:, None] - means[None, :]) / sigma) ** 2
        return logsumexp(comp + log_w[None, :], axis=1)
    pts = pts.reshape(-1, pts.shape[-1]) if pts.ndim > 1 else pts[None, :]
    if pts.size == 0:
        return np.zeros(0)
    x, y = pts[:, :-1], pts[:, -1]
    if config.family is Family.VR:
        f = vr_basis_matrix(x[:, 0], theta.k) @ np.asarray(theta.coeffs)
    else:
        f = guillotine.eval_tree(theta.tree, x)
    # uniform design density contributes log 1 = 0
    return norm_const - 0.5 * ((y - f) / sigma) ** 2


def log_density(config: ModelConfig, theta: Theta, z) -> float:
    """log p_theta(z) at one observation (z scalar for LM, (x..., y) otherwise)."""
    if config.family is Family.LM:
        return float(point_log_densities(config, theta, np.asarray([z], dtype=float))[0])
    return float(point_log_densities(config, theta, np.asarray(z, dtype=float))[0])


def log_likelihood(config: ModelConfig, theta: Theta, sample: Sample) -> float:
    """Sum of log p_theta over the sample; the empty sum is 0."""
    if sample.family is not config.family:
        raise UsageError(f"sample is {sample.family.value} but config is {config.family.value}")
    if sample.n == 0:
        return 0.0
    return float(np.sum(point_log_densities(config, theta, sample.points)))


def simulate(config: ModelConfig, theta_star: Theta, n: int, seed: int) -> Sample:
    """n i.i.d. draws from P_theta_star; bit-identical for identical arguments."""
    validate_theta(config, theta_star)
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = rng_for(seed)
    sigma = config.sigma
    if config.family is Family.LM:
        labels = rng.choice(theta_star.k, size=n, p=np.asarray(theta_star.weights))
        z = np.asarray(theta_star.means)[labels] + sigma * rng.standard_normal(n)
        return Sample(Family.LM, z, int(seed), n)
    if config.family is Family.VR:
        x = rng.uniform(0.0, 1.0, n)
        f = vr_basis_matrix(x, theta_star.k) @ np.asarray(theta_star.coeffs)
        y = f + sigma * rng.standard_normal(n)
        return Sample(Family.VR, np.column_stack([x, y]), int(seed), n)
    x = rng.uniform(0.0, 1.0, (n, 2))
    f = guillotine.eval_tree(theta_star.tree, x)
    y = f + sigma * rng.standard_normal(n)
    return Sample(Family.AC, np.column_stack([x, y]), int(seed), n)


# ---------------------------------------------------------------------------
# Text serialization (line-oriented key = value; CSV for samples)
# ---------------------------------------------------------------------------

def _kv_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"not a key = value line: {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"duplicate key {key!r}")
        out[key] = val.strip()
    return out


def config_to_kv(config: ModelConfig) -> str:
    """Line-oriented form: family (LM|AC|VR), sigma, m_lo, m_hi (the compact
    interval M), vr_basis, ac_depth_max.  Floats carry 17 significant digits
    so the round trip is exact."""
    return "\n".join([
        f"family = {config.family.value}",
        f"sigma = {fmt(config.sigma)}",
        f"m_lo = {fmt(config.m_lo)}",
        f"m_hi = {fmt(config.m_hi)}",
        f"vr_basis = {config.vr_basis}",
        f"ac_depth_max = {config.ac_depth_max}",
    ]) + "\n"


def config_from_kv(text: str) -> ModelConfig:
    kv = _kv_lines(text)
    known = {"family", "sigma", "m_lo", "m_hi", "vr_basis", "ac_depth_max"}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "family" not in kv:
        raise ValueError("missing key 'family'")
    return ModelConfig(
        family=Family(kv["family"]),
        sigma=float(kv.get("sigma", "1.0")),
        m_lo=float(kv.get("m_lo", "-2.0")),
        m_hi=float(kv.get("m_hi", "2.0")),
        vr_basis=kv.get("vr_basis", "cosine"),
        ac_depth_max=int(kv.get("ac_depth_max", "4")),
    )


def _tree_to_lines(node: Node, path: str, out: list[str]) -> None:
    if isinstance(node, Leaf):
        out.append(f"tree.{path} = leaf {fmt(node.mark)}")
        return
    out.append(f"tree.{path} = split {node.axis} {fmt(node.cut)}")
    _tree_to_lines(node.low, path + "0", out)
    _tree_to_lines(node.high, path + "1", out)


def _tree_from_map(nodes: dict[str, str], path: str) -> Node:
    if path not in nodes:
        raise ValueError(f"missing tree node at path {path!r}")
    parts = nodes[path].split()
    if parts[0] == "leaf" and len(parts) == 2:
        return Leaf(float(parts[1]))
    if parts[0] == "split" and len(parts) == 3:
        return Split(int(parts[1]), float(parts[2]),
                     _tree_from_map(nodes, path + "0"),
                     _tree_from_map(nodes, path + "1"))
    raise ValueError(f"bad tree node spec {nodes[path]!r} at path {path!r}")


def theta_to_kv(theta: Theta) -> str:
    """Line-oriented form keyed by kind:

    kind = lm    weights = w1 .. wK;  means = m1 .. mK
    kind = vr    coeffs = c1 .. cK
    kind = ac    tree.<path> = split <axis> <cut> | leaf <mark>, with <path>
                 the root "r" extended by 0 (low side) / 1 (high side).
    """
    if isinstance(theta, ThetaLM):
        return (f"kind = lm\nweights = {' '.join(fmt(w) for w in theta.weights)}\n"
                f"means = {' '.join(fmt(m) for m in theta.means)}\n")
    if isinstance(theta, ThetaVR):
        return f"kind = vr\ncoeffs = {' '.join(fmt(c) for c in theta.coeffs)}\n"
    lines = ["kind = ac"]
    _tree_to_lines(theta.tree, "r", lines)
    return "\n".join(lines) + "\n"


def theta_from_kv(text: str) -> Theta:
    kv = _kv_lines(text)
    kind = kv.pop("kind", None)
    if kind == "lm":
        if set(kv) != {"weights", "means"}:
            raise ValueError(f"lm theta needs exactly keys weights, means; got {sorted(kv)}")
        return ThetaLM(tuple(float(w) for w in kv["weights"].split()),
                       tuple(float(m) for m in kv["means"].split()))
    if kind == "vr":
        if set(kv) != {"coeffs"}:
            raise ValueError(f"vr theta needs exactly key coeffs; got {sorted(kv)}")
        return ThetaVR(tuple(float(c) for c in kv["coeffs"].split()))
    if kind == "ac":
        nodes = {}
        for key, val in kv.items():
            if not key.startswith("tree."):
                raise ValueError(f"unknown ac theta key {key!r}")
            nodes[key[len("tree."):]] = val
        return ThetaAC(_tree_from_map(nodes, "r"))
    raise ValueError(f"unknown or missing theta kind {kind!r}")


def sample_to_csv(sample: Sample) -> str:
    buf = io.StringIO()
    if sample.family is Family.LM:
        buf.write("idx,z\n")
        for i, z in enumerate(sample.points):
            buf.write(f"{i},{fmt(z)}\n")
    elif sample.family is Family.VR:
        buf.write("idx,x1,y\n")
        for i, (x, y) in enumerate(sample.points):
            buf.write(f"{i},{fmt(x)},{fmt(y)}\n")
    else:
        buf.write("idx,x1,x2,y\n")
        for i, (x1, x2, y) in enumerate(sample.points):
            buf.write(f"{i},{fmt(x1)},{fmt(x2)},{fmt(y)}\n")
    return buf.getvalue()


def sample_from_csv(text: str, seed: int = -1) -> Sample:
    """Rebuild a Sample from its CSV form.

    The CSV carries data only; the family comes from the header and the seed
    is not stored (defaults to -1, "unknown").
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty sample CSV")
    header = lines[0].strip()
    families = {"idx,z": Family.LM, "idx,x1,y": Family.VR, "idx,x1,x2,y": Family.AC}
    if header not in families:
        raise ValueError(f"unrecognized sample header {header!r}")
    family = families[header]
    rows = [tuple(float(v) for v in ln.split(",")[1:]) for ln in lines[1:]]
    pts = np.asarray(rows, dtype=float)
    if family is Family.LM:
        pts = pts.reshape(-1)
    elif pts.size == 0:
        pts = pts.reshape(0, 2 if family is Family.VR else 3)
    return Sample(family, pts, seed, len(rows))
