"""
Fehlerklassen fuer die DPVI-Engine.
Jede Klasse erbt zusaetzlich von ValueError bzw. RuntimeError,
damit Aufrufer auch mit den eingebauten Typen abfangen koennen.
"""


class DpviError(Exception):
    """Basis-Klasse fuer alle Fehler der Engine."""


# Eingabefehler
class DomainError(DpviError, ValueError):
    """Wert ausserhalb des Definitionsbereichs (z.B. nicht-endlich, sigma <= 0)."""


class ShapeError(DpviError, ValueError):
    """Dimensionen passen nicht zusammen."""


class ConfigError(DpviError, ValueError):
    """Ungueltige Konfiguration oder Parameterkombination."""


class DataError(DpviError, ValueError):
    """Ungueltige Daten (z.B. Zielwerte ausserhalb des Modell-Traegers)."""


class ContractError(DpviError, ValueError):
    """Operation fuer diese Variante nicht definiert."""


class MetricError(DpviError, ValueError):
    """Metrik nicht berechenbar."""


# Laufzeitfehler
class DivergenceError(DpviError, RuntimeError):
    """Optimierung divergiert."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class CalibrationError(DpviError, RuntimeError):
    """Rauschkalibrierung nicht moeglich."""


class AnalysisError(DpviError, RuntimeError):
    """Trace-Analyse ohne verwertbares Ergebnis."""


class GenerationError(DpviError, RuntimeError):
    """Synthetische Daten konnten nicht erzeugt werden."""
