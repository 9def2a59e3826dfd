"""Correlated-Rician channel model: scenario geometry, statistical CSI and sampling.

Every link is modeled as `deterministic + correlated scattered part`. Large-scale
path loss and the Rician power split are absorbed directly into the stored
deterministic components and the per-entry scattered standard deviations, so all
downstream algebra works on the absorbed quantities only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-10          # max asymmetry accepted by psd_sqrt
PSD_EIG_TOL = -1e-6      # eigenvalues below this are treated as a hard error
PSD_CLAMP_TOL = -1e-10   # eigenvalues in [PSD_CLAMP_TOL, 0) are clamped to 0


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------

@dataclass
class PathLossModel:
    """Distance power law: gain = c0 * (d / d0)^(-alpha), everything linear."""

    c0: float
    d0: float = 1.0
    alpha_au: float = 3.4
    alpha_ai: float = 2.2
    alpha_iu: float = 3.0

    def __post_init__(self):
        if self.c0 <= 0 or self.d0 <= 0:
            raise ValueError("c0 and d0 must be positive")


@dataclass
class RicianFactors:
    """Linear Rician factors per link type; 0 means Rayleigh fading."""

    beta_au: float
    beta_ai: float
    beta_iu: float

    def __post_init__(self):
        for name in ("beta_au", "beta_ai", "beta_iu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class CorrelationSpec:
    """Exponential-model coefficients: AP transmit, IRS receive, per-user IRS-user."""

    r_d: float
    r_r: float
    r_rk: tuple[float, ...]

    def __post_init__(self):
        self.r_rk = tuple(float(r) for r in np.atleast_1d(self.r_rk))
        for r in (self.r_d, self.r_r, *self.r_rk):
            if not 0.0 <= r <= 1.0:
                raise ValueError("correlation coefficients must lie in [0, 1]")


@dataclass
class Scenario:
    """Static description of one AP / IRS / users deployment.

    Powers are in watts, positions in meters; the IRS panel is factored as
    `irs_shape = (n_h, n_v)` with `n_h * n_v` elements (first factor indexes the
    horizontal correlation axis and varies slowest in the element ordering).
    """

    ap_position: np.ndarray
    ap_antennas: int
    irs_position: np.ndarray
    irs_shape: tuple[int, int]
    user_positions: np.ndarray
    transmit_power: float
    noise_powers: np.ndarray
    path_loss: PathLossModel
    rician: RicianFactors
    correlation: CorrelationSpec

    def __post_init__(self):
        self.ap_position = np.asarray(self.ap_position, dtype=float).reshape(3)
        self.irs_position = np.asarray(self.irs_position, dtype=float).reshape(3)
        self.user_positions = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        if self.user_positions.shape[1] != 3:
            raise ValueError("user positions must be 3-vectors")
        self.noise_powers = np.broadcast_to(
            np.asarray(self.noise_powers, dtype=float), (self.num_users,)
        ).copy()
        if self.ap_antennas < 1 or self.num_elements < 1 or self.num_users < 1:
            raise ValueError("antenna/element/user counts must be >= 1")
        if len(self.irs_shape) != 2 or min(self.irs_shape) < 1:
            raise ValueError("irs_shape must be two positive factors")
        if self.transmit_power <= 0:
            raise ValueError("transmit power must be positive")
        if np.any(self.noise_powers <= 0):
            raise ValueError("noise powers must be positive")
        if len(self.correlation.r_rk) != self.num_users:
            raise ValueError("need one IRS-user correlation coefficient per user")
        for pos in self.user_positions:
            if np.linalg.norm(pos - self.ap_position) <= 0 or np.linalg.norm(pos - self.irs_position) <= 0:
                raise ValueError("user positions must differ from AP/IRS positions")
        if np.linalg.norm(self.ap_position - self.irs_position) <= 0:
            raise ValueError("AP and IRS positions must differ")

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def num_elements(self) -> int:
        return int(self.irs_shape[0] * self.irs_shape[1])


# ---------------------------------------------------------------------------
# elementary building blocks
# ---------------------------------------------------------------------------

def path_loss(d_link: float, alpha: float, c0: float, d0: float = 1.0) -> float:
    """Linear power gain c0 * (d_link / d0)^(-alpha)."""
    if d_link <= 0:
        raise ValueError(f"link distance must be positive, got {d_link}")
    if d0 <= 0:
        raise ValueError(f"reference distance must be positive, got {d0}")
    return float(c0 * (d_link / d0) ** (-alpha))


def exp_correlation(n: int, r: float) -> np.ndarray:
    """Exponential correlation matrix with entry (i, j) = r^|i-j|."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"correlation coefficient must lie in [0, 1], got {r}")
    idx = np.arange(n)
    return r ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def kron_correlation(phi_h: np.ndarray, phi_v: np.ndarray) -> np.ndarray:
    """Kronecker product of horizontal and vertical correlation matrices."""
    for phi in (phi_h, phi_v):
        phi = np.asarray(phi)
        if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
            raise ValueError("correlation factors must be square")
        if np.iscomplexobj(phi):
            raise ValueError("correlation matrices must be real")
        if not np.allclose(phi, phi.T, atol=SYM_TOL):
            raise ValueError("correlation factors must be symmetric")
        if not np.allclose(np.diag(phi), 1.0, atol=1e-9):
            raise ValueError("correlation factors must have unit diagonal")
    return np.kron(np.asarray(phi_h, dtype=float), np.asarray(phi_v, dtype=float))


def psd_sqrt(phi: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Slightly negative eigenvalues (numerical) are clamped to zero; anything
    below -1e-6 is rejected as genuinely indefinite.
    """
    phi = np.asarray(phi)
    if np.iscomplexobj(phi):
        raise ValueError("expected a real symmetric matrix")
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(phi, phi.T, atol=SYM_TOL):
        raise ValueError("matrix is not symmetric within tolerance")
    eigvals, eigvecs = np.linalg.eigh(phi)
    if eigvals.min(initial=0.0) < PSD_EIG_TOL:
        raise ValueError(f"matrix is not PSD (min eigenvalue {eigvals.min():.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


# ---------------------------------------------------------------------------
# statistical CSI
# ---------------------------------------------------------------------------

@dataclass
class StatisticalCsi:
    """Absorbed deterministic components plus correlation structure of all links.

    `zbar_r[k]`, `zbar_d[k]` and `fbar` already include the square-root path
    gains and the deterministic Rician fraction. `s_au[k]`, `s_ai`, `s_iu[k]`
    are the per-entry standard deviations of the scattered parts after the same
    absorption (user-indexed links carry one value per user).
    """

    zbar_r: np.ndarray          # (K, N) complex
    zbar_d: np.ndarray          # (K, M) complex
    fbar: np.ndarray            # (N, M) complex
    phi_r: np.ndarray           # (N, N) real
    phi_d: np.ndarray           # (M, M) real
    phi_rk: np.ndarray          # (K, N, N) real
    s_au: np.ndarray            # (K,)
    s_ai: float
    s_iu: np.ndarray            # (K,)
    phi_r_sqrt: np.ndarray = field(default=None, repr=False)
    phi_d_sqrt: np.ndarray = field(default=None, repr=False)
    phi_rk_sqrt: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.phi_r_sqrt is None:
            self.phi_r_sqrt = psd_sqrt(self.phi_r)
        if self.phi_d_sqrt is None:
            self.phi_d_sqrt = psd_sqrt(self.phi_d)
        if self.phi_rk_sqrt is None:
            self.phi_rk_sqrt = np.stack([psd_sqrt(p) for p in self.phi_rk])

    @property
    def num_users(self) -> int:
        return self.zbar_r.shape[0]

    @property
    def num_elements(self) -> int:
        return self.zbar_r.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.fbar.shape[1]

    def mean_effective_channels(self, v: np.ndarray) -> np.ndarray:
        """Deterministic part of each user's effective channel, shape (K, M)."""
        v = np.asarray(v)
        return (self.zbar_r * v[None, :]) @ self.fbar.conj() + self.zbar_d

    def copy(self) -> "StatisticalCsi":
        return StatisticalCsi(
            zbar_r=self.zbar_r.copy(), zbar_d=self.zbar_d.copy(), fbar=self.fbar.copy(),
            phi_r=self.phi_r.copy(), phi_d=self.phi_d.copy(), phi_rk=self.phi_rk.copy(),
            s_au=self.s_au.copy(), s_ai=self.s_ai, s_iu=self.s_iu.copy(),
            phi_r_sqrt=self.phi_r_sqrt.copy(), phi_d_sqrt=self.phi_d_sqrt.copy(),
            phi_rk_sqrt=self.phi_rk_sqrt.copy(),
        )


@dataclass
class InstantaneousChannels:
    """One realization of all links for a single time slot."""

    g: np.ndarray       # (N, M) AP->IRS
    h_r: np.ndarray     # (K, N) IRS->user
    h_d: np.ndarray     # (K, M) AP->user

    @property
    def num_users(self) -> int:
        return self.h_r.shape[0]


def _cscg(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian entries, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _rician_split(gain: float, beta: float) -> tuple[float, float]:
    # returns (deterministic amplitude scale, scattered per-entry std)
    if np.isinf(beta):
        return np.sqrt(gain), 0.0
    return np.sqrt(gain * beta / (1.0 + beta)), np.sqrt(gain / (1.0 + beta))


def build_scsi(scenario: Scenario, rng: np.random.Generator) -> StatisticalCsi:
    """Draw the deterministic components once and absorb path loss / Rician split.

    For a link with path gain l and Rician factor b, the deterministic part is
    scaled by sqrt(l * b / (1 + b)) and the scattered per-entry standard
    deviation is sqrt(l / (1 + b)). The cascaded AP-IRS-user path applies the
    AP-IRS and IRS-user gains on their respective hops.
    """
    pl = scenario.path_loss
    n_h, n_v = scenario.irs_shape
    m, n, k = scenario.ap_antennas, scenario.num_elements, scenario.num_users

    d_ai = float(np.linalg.norm(scenario.ap_position - scenario.irs_position))
    gain_ai = path_loss(d_ai, pl.alpha_ai, pl.c0, pl.d0)
    det_ai, s_ai = _rician_split(gain_ai, scenario.rician.beta_ai)

    fbar = det_ai * _cscg(rng, (n, m))
    zbar_r = np.empty((k, n), dtype=complex)
    zbar_d = np.empty((k, m), dtype=complex)
    s_iu = np.empty(k)
    s_au = np.empty(k)
    for i, pos in enumerate(scenario.user_positions):
        d_iu = float(np.linalg.norm(pos - scenario.irs_position))
        d_au = float(np.linalg.norm(pos - scenario.ap_position))
        det_iu, s_iu[i] = _rician_split(path_loss(d_iu, pl.alpha_iu, pl.c0, pl.d0),
                                        scenario.rician.beta_iu)
        det_au, s_au[i] = _rician_split(path_loss(d_au, pl.alpha_au, pl.c0, pl.d0),
                                        scenario.rician.beta_au)
        zbar_r[i] = det_iu * _cscg(rng, (n,))
        zbar_d[i] = det_au * _cscg(rng, (m,))

    corr = scenario.correlation
    phi_d = exp_correlation(m, corr.r_d)
    phi_r = kron_correlation(exp_correlation(n_h, corr.r_r), exp_correlation(n_v, corr.r_r))
    phi_rk = np.stack([
        kron_correlation(exp_correlation(n_h, r), exp_correlation(n_v, r))
        for r in corr.r_rk
    ])
    return StatisticalCsi(
        zbar_r=zbar_r, zbar_d=zbar_d, fbar=fbar,
        phi_r=phi_r, phi_d=phi_d, phi_rk=phi_rk,
        s_au=s_au, s_ai=s_ai, s_iu=s_iu,
    )


def sample_batch(
    scsi: StatisticalCsi, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample `size` independent slot realizations at once.

    Returns (g, h_r, h_d) with shapes (size, N, M), (size, K, N), (size, K, M).
    """
    k, n, m = scsi.num_users, scsi.num_elements, scsi.num_antennas
    z_g = _cscg(rng, (size, n, m))
    g = scsi.fbar[None] + scsi.s_ai * (scsi.phi_r_sqrt @ z_g @ scsi.phi_d_sqrt)

    h_r = np.empty((size, k, n), dtype=complex)
    for i in range(k):
        z = _cscg(rng, (size, n))
        # phi^(1/2) is symmetric, so right-multiplication acts per sample
        h_r[:, i, :] = scsi.zbar_r[i][None] + scsi.s_iu[i] * (z @ scsi.phi_rk_sqrt[i])

    h_d = np.empty((size, k, m), dtype=complex)
    for i in range(k):
        z = _cscg(rng, (size, m))
        h_d[:, i, :] = scsi.zbar_d[i][None] + scsi.s_au[i] * (z @ scsi.phi_d_sqrt)
    return g, h_r, h_d


def sample_instantaneous(scsi: StatisticalCsi, rng: np.random.Generator) -> InstantaneousChannels:
    """Draw one correlated-Rician realization of all links."""
    g, h_r, h_d = sample_batch(scsi, 1, rng)
    return InstantaneousChannels(g=g[0], h_r=h_r[0], h_d=h_d[0])


# ---------------------------------------------------------------------------
# reflection configuration and effective channels
# ---------------------------------------------------------------------------

CONTINUOUS = 0  # `levels` value encoding continuous phase resolution

GRID_ANGLE_TOL = 1e-12


def grid_angles(levels: int) -> np.ndarray:
    """The discrete phase grid {0, 2*pi/L, ..., 2*pi*(L-1)/L}."""
    if levels < 1:
        raise ValueError("grid_angles needs levels >= 1")
    return 2.0 * np.pi * np.arange(levels) / levels


def nearest_level(theta: np.ndarray, levels: int) -> np.ndarray:
    """Index of the grid phase closest (wrap-around) to each angle.

    Exact ties resolve to the lowest index.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.mod(theta, 2.0 * np.pi) * levels / (2.0 * np.pi)
    base = np.floor(x)
    frac = x - base
    idx = np.where(frac > 0.5, base + 1.0, base)
    # wrap tie between the last level and level 0 resolves to 0
    idx = np.where((frac == 0.5) & (base == levels - 1), 0.0, idx)
    return (idx.astype(int)) % levels


def quantize_phases(theta: np.ndarray, levels: int) -> np.ndarray:
    """Unit-modulus vector on the phase grid nearest to the given angles."""
    if levels == CONTINUOUS:
        return np.exp(1j * np.asarray(theta, dtype=float))
    return np.exp(1j * grid_angles(levels)[nearest_level(theta, levels)])


@dataclass
class PhaseConfig:
    """IRS reflection vector (conjugated reflection coefficients) plus resolution.

    `levels == 0` encodes continuous phases; `levels >= 1` means phases lie on
    the uniform grid with that many points. `amplitude` is "unit" for
    unit-modulus entries or "relaxed" for magnitudes in [0, 1].
    """

    v: np.ndarray
    levels: int = CONTINUOUS
    amplitude: str = "unit"

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=complex).reshape(-1)
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.amplitude not in ("unit", "relaxed"):
            raise ValueError("amplitude must be 'unit' or 'relaxed'")
        mags = np.abs(self.v)
        if self.amplitude == "unit":
            if not np.allclose(mags, 1.0, atol=1e-9):
                raise ValueError("unit amplitude mode requires |v_n| = 1")
            if self.levels >= 1:
                angles = np.mod(np.angle(self.v), 2.0 * np.pi)
                grid = grid_angles(self.levels)
                dist = np.abs(angles[:, None] - grid[None, :])
                dist = np.minimum(dist, 2.0 * np.pi - dist)
                if dist.min(axis=1).max() > GRID_ANGLE_TOL:
                    raise ValueError("phases are not on the declared grid")
        elif np.any(mags > 1.0 + 1e-9):
            raise ValueError("relaxed amplitude mode requires |v_n| <= 1")

    @property
    def bits(self) -> int | None:
        """Bits per element, or None when the level count is not a power of two."""
        if self.levels == CONTINUOUS:
            return 0
        q = int(round(np.log2(self.levels)))
        return q if 2 ** q == self.levels else None

    @property
    def size(self) -> int:
        return self.v.shape[0]


def phase_vector(v) -> np.ndarray:
    """Accept a PhaseConfig or a raw complex vector."""
    if isinstance(v, PhaseConfig):
        return v.v
    return np.asarray(v, dtype=complex).reshape(-1)


def effective_channel(v, ch: InstantaneousChannels, k: int) -> np.ndarray:
    """Composite AP->user channel seen with reflection vector v frozen.

    h_k = G^H diag(h_{r,k}) v + h_{d,k}, i.e. h_k^H = v^H diag(h_{r,k}^H) G + h_{d,k}^H.
    """
    vv = phase_vector(v)
    return ch.g.conj().T @ (ch.h_r[k] * vv) + ch.h_d[k]


def effective_channels(v, ch: InstantaneousChannels) -> np.ndarray:
    """Effective channels of all users, shape (K, M)."""
    vv = phase_vector(v)
    return (ch.h_r * vv[None, :]) @ ch.g.conj() + ch.h_d
