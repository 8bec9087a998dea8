import os
from pathlib import Path
from typing import Tuple
from pydantic_settings import BaseSettings, SettingsConfigDict

ROOT_DIR = Path(__file__).parent.parent.parent

class Settings(BaseSettings):
    # Application
    APP_NAME: str = "perplab"
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/perplab.log"

    # Transfer operator / spectral solves
    POWER_TOL: float = 1e-12  # relative change of successive eigenvalue estimates
    POWER_RESIDUAL_TOL: float = 1e-10
    POWER_MAX_ITER: int = 10_000
    SPECTRAL_AGREEMENT_RTOL: float = 1e-3  # primal vs conjugate kappa at the default grid resolutions
    GRID_RESOLUTION_D2: int = 200  # even, so (1/2, 1/2) is a node
    GRID_RESOLUTION_D3: int = 40
    GRID_NODES_HIGH_D: int = 2048
    DERIV_BASE_STEP: float = 1e-2
    S_MAX_DEFAULT: float = 64.0  # largest s used when a law declares no moment bound
    ALPHA_BRACKET_LO: float = 1e-3
    ALPHA_BRACKET_HI: float = 8.0
    S_GRID_POINTS: int = 25
    CONVEXITY_TOL: float = 1e-8

    # Simulation
    WORKERS: int = 1
    BLOCK_SIZE: int = 2048  # replicates per RNG stream, independent of WORKERS
    MAX_STEPS_FALLBACK: int = 1_000_000
    CENSOR_FACTOR: float = 4.0  # max_steps = ceil(CENSOR_FACTOR * rho * log u)
    RESCALE_HIGH: float = 1e100
    RESCALE_LOW: float = 1e-100

    # Exact enumeration
    ORACLE_MAX_PATHS: int = 2**22
    ORACLE_PRUNE_TOL: float = 0.0

    # Prefactor estimation
    PLATEAU_RTOL: float = 1e-4
    PLATEAU_RUN: int = 3
    PREFACTOR_MAX_N: int = 40
    PREFACTOR_MC_SAMPLES: int = 20_000

    # Verification thresholds (acceptance baseline)
    KESTEN_ALPHA_RTOL: float = 0.1
    HILL_TAIL_FRACTION: float = 0.01
    LLN_EPS: float = 0.25
    LLN_MAX_FRACTION: float = 0.1
    LLN_DELTA: float = 0.1
    CLT_MAX_KS: float = 0.10
    LD_SLOPE_RTOL: float = 0.10
    LD_RATIO_BAND: Tuple[float, float] = (0.5, 2.0)
    LOCAL_RTOL: float = 0.25
    MATRIX_LD_BAND: Tuple[float, float] = (0.6, 1.6)
    TREND_SIGMAS: float = 2.0  # allowed non-monotonicity, in standard errors
    VERIFY_SAMPLES: int = 20_000

    # Storage
    DATA_DIR: Path = ROOT_DIR / "perplab" / "data"
    OUTPUT_DIR: Path = ROOT_DIR / "runs"
    CACHE_DIR: Path = ROOT_DIR / "runs" / "cache"

    model_config = SettingsConfigDict(
        env_prefix="PERPLAB_",
        env_file=[os.path.join(ROOT_DIR, ".env")],
        env_file_encoding='utf-8',
        extra='ignore'
    )

settings = Settings()
