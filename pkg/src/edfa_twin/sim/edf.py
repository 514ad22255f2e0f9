"""Two-level erbium-doped fiber stage: parameters and forward propagation.

Signal channels and a co-propagating pump are integrated jointly in
log-power. With ``u_k = ln P_k`` the propagation law becomes

    du_k/dz = rho*Gamma_k*(sig_e,k + sig_a,k) * N2(z) - (rho*Gamma_k*sig_a,k + alpha)

and the integrated inversion ``I(z) = int_0^z N2`` is carried as one extra
state column. Because every RK stage advances ``u_k`` and ``I`` with the same
weights, the stage gain satisfies ``G = A * <N2> + B * L`` to rounding
error, independently of the step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, SpectrumError
from ..integrate import integrate_adaptive, integrate_fixed
from ..spectral import PowerSpectrum

PLANCK = 6.62607015e-34  # J s
DB_PER_NEPER = 10.0 / np.log(10.0)
# pump power floor (mW) so that ln(P) stays finite for an unpumped stage
_PUMP_FLOOR_MW = 1e-30

__all__ = [
    "EdfStageParams",
    "StageLoss",
    "gain_coefficients",
    "propagate_stage",
    "propagate_batch",
    "DB_PER_NEPER",
]


def _arr(values, n=None):
    a = np.array(values, dtype=float)
    if a.ndim == 0 and n is not None:
        a = np.full(n, float(a))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EdfStageParams:
    """Physical constants of one doped-fiber stage.

    Per-channel arrays (``overlap``, ``sigma_abs``, ``sigma_emi``) are aligned
    with the channel grid the stage is used on; the pump has scalar values.
    Units are SI except ``pump_frequency`` (THz).
    """

    length_m: float
    ion_density: float
    overlap: np.ndarray
    sigma_abs: np.ndarray
    sigma_emi: np.ndarray
    signal_frequencies: np.ndarray  # THz
    overlap_pump: float = 0.7
    sigma_abs_pump: float = 2.5e-25
    sigma_emi_pump: float = 0.0
    background_loss: float = 0.0
    core_area: float = 7.07e-12
    lifetime: float = 10e-3
    pump_frequency: float = 305.9

    def __post_init__(self):
        freqs = _arr(self.signal_frequencies)
        n = freqs.size
        for name in ("overlap", "sigma_abs", "sigma_emi"):
            a = _arr(getattr(self, name), n)
            if a.shape != (n,):
                raise ConfigError(f"{name} must have one value per channel ({n})")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "signal_frequencies", freqs)
        if not self.length_m > 0:
            raise ConfigError("length_m must be positive")
        for name in ("ion_density", "core_area", "lifetime", "pump_frequency"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.background_loss < 0:
            raise ConfigError("background_loss must be non-negative")
        ov = np.r_[self.overlap, self.overlap_pump]
        if np.any(ov <= 0) or np.any(ov > 1):
            raise ConfigError("overlap factors must lie in (0, 1]")
        sig = np.r_[self.sigma_abs, self.sigma_emi, self.sigma_abs_pump, self.sigma_emi_pump]
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ConfigError("cross sections must be finite and non-negative")

    @property
    def n_channels(self) -> int:
        return self.signal_frequencies.size

    def with_length(self, length_m: float) -> "EdfStageParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw["length_m"] = length_m
        return EdfStageParams(**kw)

    def same_fiber(self, other: "EdfStageParams") -> bool:
        """True when both stages use the same fiber type (every field but length)."""
        for k in self.__dataclass_fields__:
            if k == "length_m":
                continue
            if not np.array_equal(np.asarray(getattr(self, k)), np.asarray(getattr(other, k))):
                return False
        return True

    # --- derived coefficient vectors over [channels..., pump] -------------
    def _all(self, sig_name, pump_name):
        return np.r_[getattr(self, sig_name), getattr(self, pump_name)]

    def _coefficients(self):
        gamma = self._all("overlap", "overlap_pump")
        sa = self._all("sigma_abs", "sigma_abs_pump")
        se = self._all("sigma_emi", "sigma_emi_pump")
        nu_hz = np.r_[self.signal_frequencies, self.pump_frequency] * 1e12
        growth = self.ion_density * gamma * (sa + se)
        loss = self.ion_density * gamma * sa + self.background_loss
        # saturation coefficients in 1/mW: Gamma*sigma*tau / (h*nu*A_core)
        scale = self.lifetime / (PLANCK * nu_hz * self.core_area) * 1e-3
        return growth, loss, gamma * sa * scale, gamma * se * scale


@dataclass(frozen=True, eq=False)
class StageLoss:
    """Insertion-loss spectrum (dB, non-negative) applied after a stage."""

    loss_db: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = _arr(self.loss_db)
        if a.ndim != 1 or np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ConfigError("stage loss must be a finite, non-negative 1-D spectrum")
        object.__setattr__(self, "loss_db", a)

    @classmethod
    def flat(cls, loss_db: float, n_channels: int) -> "StageLoss":
        return cls(np.full(n_channels, float(loss_db)))


def gain_coefficients(params: EdfStageParams):
    """Per-channel dB gain coefficients ``(A, B)`` with ``G = A*<N2> + B*L``.

    ``A`` is in dB per metre of integrated inversion, ``B`` in dB/m.
    """
    growth, loss, _, _ = params._coefficients()
    n = params.n_channels
    return DB_PER_NEPER * growth[:n], -DB_PER_NEPER * loss[:n]


class _StageRhs:
    """Right-hand side over state columns [ln P_1..ln P_n, ln P_pump, I]."""

    def __init__(self, params: EdfStageParams):
        self.growth, self.loss, self.ca, self.ce = params._coefficients()

    def __call__(self, y):
        p = np.exp(y[:, :-1])
        s_a = (p * self.ca).sum(axis=1)
        s_e = (p * self.ce).sum(axis=1)
        n2 = s_a / (1.0 + s_a + s_e)
        d = np.empty_like(y)
        d[:, :-1] = self.growth * n2[:, None] - self.loss
        d[:, -1] = n2
        return d


def _initial_state(p_in_mw, pump_mw):
    p_in_mw = np.atleast_2d(np.asarray(p_in_mw, dtype=float))
    pump = np.maximum(np.broadcast_to(np.asarray(pump_mw, dtype=float), (p_in_mw.shape[0],)),
                      _PUMP_FLOOR_MW)
    return np.column_stack([np.log(p_in_mw), np.log(pump), np.zeros(p_in_mw.shape[0])])


def propagate_batch(params: EdfStageParams, p_in_mw, pump_mw, *, tol=1e-9, n_fixed=None):
    """Propagate a batch of channel power vectors through one stage.

    Parameters
    ----------
    p_in_mw : array (B, n_channels)
        Input channel powers in mW (all strictly positive).
    pump_mw : float or array (B,)
        Launched pump power per row.
    tol : float
        Per-step error tolerance on ln(P) (i.e. relative power error).
    n_fixed : int, optional
        Use fixed-step RK4 with this many steps instead of adaptive stepping.

    Returns
    -------
    p_out_mw : array (B, n_channels)
    n2_integral : array (B,)
        Integrated upper-level population ``int_0^L N2 dz`` in metres.
    pump_out_mw : array (B,)
    n_steps : array (B,) of accepted steps
    """
    y0 = _initial_state(p_in_mw, pump_mw)
    if y0.shape[1] - 2 != params.n_channels:
        raise SpectrumError(
            f"stage defined for {params.n_channels} channels, input has {y0.shape[1] - 2}"
        )
    if np.any(np.asarray(pump_mw) < 0):
        raise ValueError("pump power must be non-negative")
    rhs = _StageRhs(params)
    if n_fixed is None:
        y, n_steps = integrate_adaptive(rhs, y0, params.length_m, tol=tol,
                                        err_cols=slice(0, -1))
    else:
        y = integrate_fixed(rhs, y0, params.length_m, n_fixed)
        n_steps = np.full(y.shape[0], int(n_fixed))
    n = params.n_channels
    return np.exp(y[:, :n]), y[:, -1], np.exp(y[:, n]), n_steps


def propagate_stage(params: EdfStageParams, spectrum: PowerSpectrum, pump_mw: float, *, tol=1e-9):
    """Propagate one input spectrum through a stage.

    Returns
    -------
    output : PowerSpectrum
        Output powers, same grid and loaded mask as the input.
    n2_integral : float
        ``<N2>`` in metres.
    """
    if pump_mw < 0:
        raise ValueError("pump power must be non-negative")
    p_out, n2, _, _ = propagate_batch(params, spectrum.values_mw[None, :], pump_mw, tol=tol)
    out = PowerSpectrum(spectrum.grid, 10.0 * np.log10(p_out[0]), spectrum.loaded)
    return out, float(n2[0])
