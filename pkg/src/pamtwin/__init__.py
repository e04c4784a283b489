"""Digital twin of an antagonistic pneumatic-artificial-muscle joint.

Plant simulation, pressure-only UKF state estimation, cascaded PI
angle/stiffness control and the admissible (angle, stiffness) reference set.
"""

from pamtwin.statics import ModelParameters, OperatingSets, PlantState, ModelDomainError

__all__ = ["ModelParameters", "OperatingSets", "PlantState", "ModelDomainError"]
__version__ = "0.1.0"
