from src.services.model_service import model_service
from src.services.spectral_service import spectral_service
from src.services.simulation_service import simulation_service
from src.services.oracle_service import oracle_service
from src.services.asymptotics_service import asymptotics_service
from src.services.verification_service import verification_service

__all__ = [
    "model_service",
    "spectral_service",
    "simulation_service",
    "oracle_service",
    "asymptotics_service",
    "verification_service",
]
