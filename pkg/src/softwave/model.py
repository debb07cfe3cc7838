"""The physical plant: geometry, mount, body and fluid parameters in one bundle."""

from dataclasses import dataclass, field
from functools import cached_property

from .dynamics import DynamicParams, model_arrays
from .hydro import HydroCoeffs
from .kinematics import BasePose, SegmentGeometry


@dataclass(frozen=True)
class Plant:
    geom: SegmentGeometry = field(default_factory=SegmentGeometry)
    base: BasePose = field(default_factory=BasePose)
    params: DynamicParams = field(default_factory=DynamicParams)
    coeffs: HydroCoeffs = field(default_factory=HydroCoeffs)

    def __post_init__(self):
        if self.coeffs.rho_f != self.params.rho_f:
            raise ValueError("fluid density differs between hydro coefficients and dynamic params")

    @property
    def n(self):
        return self.geom.n

    @cached_property
    def arrays(self):
        return model_arrays(self.geom, self.params, self.base, self.coeffs)
