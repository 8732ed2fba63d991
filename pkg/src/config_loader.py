"""
Konfigurations-Loader fuer die DPVI-Engine.
Laedt config/.env und die benannten Experiment-Konfigurationen.
"""

import os
import logging
from pathlib import Path
from dotenv import load_dotenv, dotenv_values

logger = logging.getLogger(__name__)

BASE_DIR = Path(os.environ.get("DPVI_BASE_DIR", Path(__file__).resolve().parent.parent))
CONFIG_DIR = BASE_DIR / "config"
EXPERIMENTS_DIR = BASE_DIR / "experiments"


def load_config():
    """Laedt die .env Konfiguration."""
    env_path = CONFIG_DIR / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        logger.warning(f".env nicht gefunden: {env_path}")
        load_dotenv()

    return {
        # Allgemein
        "log_level": os.getenv("DPVI_LOG_LEVEL", "INFO"),
        "log_dir": os.getenv("DPVI_LOG_DIR", ""),
        "output_dir": os.getenv("DPVI_OUTPUT_DIR", str(BASE_DIR / "output")),
        # Training
        "seed": int(os.getenv("DPVI_SEED", "0")),
        "transform": os.getenv("DPVI_TRANSFORM", "softplus"),
        "learning_rate": float(os.getenv("DPVI_LEARNING_RATE", "1e-3")),
        "init_sigma": float(os.getenv("DPVI_INIT_SIGMA", "1.0")),
        "init_mean_std": float(os.getenv("DPVI_INIT_MEAN_STD", "0.1")),
        "log_every": int(os.getenv("DPVI_LOG_EVERY", "1000")),
        # Auswertung
        "predictive_samples": int(os.getenv("DPVI_PREDICTIVE_SAMPLES", "200")),
        # Privacy-Accountant: classic oder improved
        "accountant_conversion": os.getenv("DPVI_ACCOUNTANT_CONVERSION", "classic"),
    }


def load_experiment_config(name):
    """
    Laedt eine Experiment-Konfiguration (KEY=VALUE).
    Sucht in experiments/{name}.txt, alternativ ist name ein Pfad.
    """
    path = Path(name)
    if not path.exists():
        path = EXPERIMENTS_DIR / f"{name.replace('-', '_')}.txt"

    if not path.exists():
        logger.error(f"Experiment-Konfiguration nicht gefunden: {path}")
        logger.info(f"Verfuegbare Experimente: {list_available_experiments()}")
        raise FileNotFoundError(f"Experiment '{name}' nicht gefunden")

    values = {key.lower(): value for key, value in dotenv_values(path).items() if value is not None}
    logger.info(f"Experiment-Konfiguration geladen: {path.stem}")
    return values


def list_available_experiments():
    """Listet alle verfuegbaren Experiment-Konfigurationen auf."""
    if not EXPERIMENTS_DIR.exists():
        return []
    return sorted(f.stem.replace("_", "-") for f in EXPERIMENTS_DIR.glob("*.txt"))
